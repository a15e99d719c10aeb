//! Replications over a seed list, their aggregation, side-by-side MAC
//! comparison, and the files written for each.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::project_lifetime;
use crate::engine::{simulate, RunOptions, RunResult};
use crate::error::{Error, Result};
use crate::mac::MacKind;
use crate::metrics::{MetricsSummary, Outcome};
use crate::phy::RadioMode;
use crate::scenario::Scenario;

/// Window, in seconds, over which the lifetime projection averages the draw.
pub const LIFETIME_WINDOW_S: f64 = 600.0;

/// Per-run numbers as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mac: MacKind,
    pub metrics: MetricsSummary,
    pub energy_by_mode_j: BTreeMap<String, f64>,
    pub depleted_at_s: Option<f64>,
    pub projected_lifetime_s: Option<f64>,
    pub events: u64,
}

impl RunSummary {
    pub fn from_result(r: &RunResult) -> Self {
        let per_mode = r.energy.per_mode_j();
        let energy_by_mode_j = RadioMode::ALL
            .iter()
            .map(|m| (format!("{m:?}").to_lowercase(), per_mode[m.index()]))
            .collect();
        RunSummary {
            seed: r.seed,
            mac: r.mac,
            metrics: r.summary.clone(),
            energy_by_mode_j,
            depleted_at_s: r.energy.depleted_at().map(|t| t.secs()),
            projected_lifetime_s: project_lifetime(&r.energy, LIFETIME_WINDOW_S),
            events: r.events,
        }
    }

    pub fn mean_delay(&self) -> Option<f64> {
        self.metrics.delay.map(|d| d.mean_s)
    }

    /// Whether the slowest packet took more than twice the mean delay.
    pub fn has_delay_spike(&self) -> bool {
        self.metrics.delay.is_some_and(|d| d.max_s > 2.0 * d.mean_s)
    }
}

/// Mean and sample standard deviation over the runs where the value exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    /// `None` with fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let n = v.len();
        if n == 0 {
            return Stat { mean: None, std: None, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Stat { mean: Some(mean), std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mac: MacKind,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub pdr: Stat,
    pub transmitted_fraction: Stat,
    pub mean_delay_s: Stat,
    pub min_delay_s: Stat,
    pub max_delay_s: Stat,
    pub residual_energy_j: Stat,
    pub projected_lifetime_s: Stat,
    pub generated: Stat,
    pub received: Stat,
    pub dropped: Stat,
    pub collisions: Stat,
    /// Runs whose maximum delay exceeds twice their mean delay.
    pub delay_spike_runs: usize,
    pub runs: Vec<RunSummary>,
}

impl Aggregate {
    pub fn from_runs(scenario: &Scenario, runs: Vec<RunSummary>) -> Self {
        let stat = |f: &dyn Fn(&RunSummary) -> Option<f64>| Stat::of(runs.iter().map(f));
        Aggregate {
            mac: scenario.mac.kind,
            scenario: scenario.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            pdr: stat(&|r| r.metrics.pdr),
            transmitted_fraction: stat(&|r| Some(r.metrics.transmitted_fraction)),
            mean_delay_s: stat(&|r| r.mean_delay()),
            min_delay_s: stat(&|r| r.metrics.delay.map(|d| d.min_s)),
            max_delay_s: stat(&|r| r.metrics.delay.map(|d| d.max_s)),
            residual_energy_j: stat(&|r| Some(r.metrics.residual_energy_j)),
            projected_lifetime_s: stat(&|r| r.projected_lifetime_s),
            generated: stat(&|r| Some(r.metrics.generated as f64)),
            received: stat(&|r| Some(r.metrics.received as f64)),
            dropped: stat(&|r| Some(r.metrics.dropped as f64)),
            collisions: stat(&|r| Some(r.metrics.collisions as f64)),
            delay_spike_runs: runs.iter().filter(|r| r.has_delay_spike()).count(),
            runs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub struct RunReport {
    pub results: Vec<RunResult>,
    pub aggregate: Aggregate,
}

/// Runs every seed of `scenario` (validated by the caller), using up to
/// `workers` threads. Results come back in seed-list order.
pub fn run(scenario: &Scenario, opts: &RunOptions, workers: usize) -> RunReport {
    let seeds = &scenario.seeds;
    let workers = workers.clamp(1, seeds.len().max(1));
    let mut slots: Vec<Option<RunResult>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = seeds.len().div_ceil(workers).max(1);
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    let out: Vec<(usize, RunResult)> = part
                        .iter()
                        .enumerate()
                        .map(|(i, &seed)| (c * chunk + i, simulate(scenario, seed, opts)))
                        .collect();
                    out
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("replication worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let results: Vec<RunResult> = slots.into_iter().map(|r| r.expect("every seed ran")).collect();
    let aggregate = Aggregate::from_runs(scenario, results.iter().map(RunSummary::from_result).collect());
    RunReport { results, aggregate }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.9}")
}

pub fn packets_csv(r: &RunResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["packet_id", "send_s", "outcome", "recv_s", "delay_s", "drop_reason", "hops"])
        .expect("in-memory write");
    for p in &r.records {
        let (outcome, recv, delay, reason) = match p.outcome {
            Outcome::Received { at } => ("received", fmt_f(at.secs()), fmt_f(at - p.sent), String::new()),
            Outcome::Dropped { reason, .. } => ("dropped", String::new(), String::new(), reason.to_string()),
            Outcome::InFlight => ("in-flight", String::new(), String::new(), String::new()),
        };
        w.write_record([
            p.id.to_string(),
            fmt_f(p.sent.secs()),
            outcome.to_string(),
            recv,
            delay,
            reason,
            p.hops.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn energy_csv(r: &RunResult) -> String {
    let mut out = String::from("time_s,residual_j\n");
    for (t, j) in r.energy.series() {
        let _ = writeln!(out, "{},{}", fmt_f(t.secs()), fmt_f(*j));
    }
    out
}

pub fn trajectory_csv(r: &RunResult) -> String {
    let mut out = String::from("time_s,x_m,y_m\n");
    for (t, p) in &r.trajectory {
        let _ = writeln!(out, "{},{:.3},{:.3}", fmt_f(t.secs()), p.x, p.y);
    }
    out
}

pub fn stations_csv(r: &RunResult) -> String {
    let mut out = String::from("node,role,x_m,y_m\n");
    for (i, p) in r.stations.iter().enumerate() {
        let role = if i == r.server { "server" } else { "station" };
        let _ = writeln!(out, "{i},{role},{:.3},{:.3}", p.x, p.y);
    }
    out
}

pub fn trace_log(r: &RunResult) -> String {
    let mut out = String::new();
    for line in &r.trace {
        let _ = writeln!(out, "{line}");
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `aggregate.json` and one `seed-N/` directory per run into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (r, summary) in report.results.iter().zip(&report.aggregate.runs) {
        let run_dir = dir.join(format!("seed-{}", r.seed));
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        write(&run_dir.join("packets.csv"), &packets_csv(r))?;
        write(&run_dir.join("energy.csv"), &energy_csv(r))?;
        write(&run_dir.join("trajectory.csv"), &trajectory_csv(r))?;
        write(&run_dir.join("stations.csv"), &stations_csv(r))?;
        let json = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
        write(&run_dir.join("summary.json"), &json)?;
        if !r.trace.is_empty() {
            write(&run_dir.join("trace.log"), &trace_log(r))?;
        }
    }
    write(&dir.join("aggregate.json"), &report.aggregate.to_json())
}

/// One named check over a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub mac: MacKind,
    pub runs: usize,
    pub pdr: Option<f64>,
    pub transmitted_fraction: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub min_delay_s: Option<f64>,
    pub max_delay_s: Option<f64>,
    pub residual_energy_j: Option<f64>,
    pub delay_spike_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<Column>,
    pub verdicts: Vec<Verdict>,
}

/// Builds the side-by-side table. The aggregates must come from scenarios
/// that differ only in the MAC, each MAC at most once.
pub fn compare(aggregates: &[Aggregate]) -> Result<Comparison> {
    let Some(first) = aggregates.first() else {
        return Err(Error::Compare("nothing to compare".into()));
    };
    let mut seen = Vec::new();
    for a in aggregates {
        if seen.contains(&a.mac) {
            return Err(Error::Compare(format!("MAC {} appears twice", a.mac)));
        }
        seen.push(a.mac);
        if !first.scenario.differs_only_in_mac(&a.scenario) {
            return Err(Error::Compare(format!(
                "scenario for {} differs from the one for {} in more than the MAC",
                a.mac, first.mac
            )));
        }
    }
    let columns: Vec<Column> = aggregates
        .iter()
        .map(|a| Column {
            mac: a.mac,
            runs: a.runs.len(),
            pdr: a.pdr.mean,
            transmitted_fraction: a.transmitted_fraction.mean,
            mean_delay_s: a.mean_delay_s.mean,
            min_delay_s: a.min_delay_s.mean,
            max_delay_s: a.max_delay_s.mean,
            residual_energy_j: a.residual_energy_j.mean,
            delay_spike_runs: a.delay_spike_runs,
        })
        .collect();
    let verdicts = if columns.len() > 1 { verdicts(&columns) } else { Vec::new() };
    Ok(Comparison { columns, verdicts })
}

fn ranking(columns: &[Column], key: impl Fn(&Column) -> Option<f64>, ascending: bool) -> Vec<(MacKind, f64)> {
    let mut v: Vec<(MacKind, f64)> = columns.iter().filter_map(|c| key(c).map(|x| (c.mac, x))).collect();
    v.sort_by(|a, b| if ascending { a.1.total_cmp(&b.1) } else { b.1.total_cmp(&a.1) });
    v
}

fn chain(v: &[(MacKind, f64)], op: &str) -> String {
    v.iter().map(|(m, _)| m.name()).collect::<Vec<_>>().join(op)
}

fn strictly(v: &[(MacKind, f64)], ascending: bool) -> bool {
    v.windows(2).all(|w| if ascending { w[0].1 < w[1].1 } else { w[0].1 > w[1].1 })
}

fn verdicts(columns: &[Column]) -> Vec<Verdict> {
    let col = |m: MacKind| columns.iter().find(|c| c.mac == m);
    let mut out = Vec::new();

    let delays = ranking(columns, |c| c.mean_delay_s, true);
    out.push(Verdict {
        name: "delay-order".into(),
        holds: strictly(&delays, true),
        detail: chain(&delays, " < "),
    });
    let pdrs = ranking(columns, |c| c.pdr, false);
    out.push(Verdict {
        name: "pdr-order".into(),
        holds: strictly(&pdrs, false),
        detail: chain(&pdrs, " > "),
    });
    let energy = ranking(columns, |c| c.residual_energy_j, false);
    out.push(Verdict {
        name: "residual-energy-order".into(),
        holds: strictly(&energy, false),
        detail: chain(&energy, " > "),
    });

    let all = MacKind::ALL.map(col);
    if let [Some(wifi), Some(lr), Some(smac), Some(tdma)] = all {
        let d = |c: &Column| c.mean_delay_s.unwrap_or(f64::NAN);
        let expected = [lr, wifi, tdma, smac];
        let ordered = expected.windows(2).all(|w| d(w[0]) < d(w[1]));
        out.push(Verdict {
            name: "delay: 802.15.4 < 802.11 < tdma < smac".into(),
            holds: ordered && d(smac) > 1.0 && d(wifi) < 0.1 && d(lr) < 0.1,
            detail: format!(
                "802.15.4 {:.6} s, 802.11 {:.6} s, tdma {:.6} s, smac {:.6} s",
                d(lr),
                d(wifi),
                d(tdma),
                d(smac)
            ),
        });
        let p = |c: &Column| c.pdr.unwrap_or(f64::NAN);
        out.push(Verdict {
            name: "pdr: 802.11>=0.90, 802.15.4>=0.85, tdma>=0.85, smac<=0.50".into(),
            holds: p(wifi) >= 0.90 && p(lr) >= 0.85 && p(tdma) >= 0.85 && p(smac) <= 0.50,
            detail: format!(
                "802.11 {:.4}, 802.15.4 {:.4}, tdma {:.4}, smac {:.4}",
                p(wifi),
                p(lr),
                p(tdma),
                p(smac)
            ),
        });
        let e = |c: &Column| c.residual_energy_j.unwrap_or(f64::NAN);
        let tdma_top = [wifi, lr, smac].iter().all(|c| e(tdma) > e(c));
        out.push(Verdict {
            name: "residual energy: tdma highest, smac below tdma and 802.15.4".into(),
            holds: tdma_top && e(smac) < e(tdma) && e(smac) < e(lr),
            detail: format!(
                "tdma {:.3} J, 802.15.4 {:.3} J, smac {:.3} J, 802.11 {:.3} J",
                e(tdma),
                e(lr),
                e(smac),
                e(wifi)
            ),
        });
        let needed = (smac.runs * 4).div_ceil(5);
        out.push(Verdict {
            name: "smac delay spikes: max > 2x mean".into(),
            holds: smac.runs > 0 && smac.delay_spike_runs >= needed,
            detail: format!("{} of {} runs (need {needed})", smac.delay_spike_runs, smac.runs),
        });
    }
    out
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, Vec<String>)> = vec![
            ("runs".into(), self.columns.iter().map(|c| c.runs.to_string()).collect()),
            ("pdr".into(), self.columns.iter().map(|c| cell(c.pdr, 4)).collect()),
            (
                "transmitted fraction".into(),
                self.columns.iter().map(|c| cell(c.transmitted_fraction, 4)).collect(),
            ),
            ("mean delay (s)".into(), self.columns.iter().map(|c| cell(c.mean_delay_s, 6)).collect()),
            ("min delay (s)".into(), self.columns.iter().map(|c| cell(c.min_delay_s, 6)).collect()),
            ("max delay (s)".into(), self.columns.iter().map(|c| cell(c.max_delay_s, 6)).collect()),
            (
                "residual energy (J)".into(),
                self.columns.iter().map(|c| cell(c.residual_energy_j, 3)).collect(),
            ),
            (
                "delay spike runs".into(),
                self.columns.iter().map(|c| c.delay_spike_runs.to_string()).collect(),
            ),
        ];
        rows.insert(0, ("metric".into(), self.columns.iter().map(|c| c.mac.name().to_string()).collect()));
        let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let col_w: Vec<usize> = (0..self.columns.len())
            .map(|i| rows.iter().map(|r| r.1[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (label, cells) in &rows {
            let _ = write!(out, "{label:<label_w$}");
            for (c, w) in cells.iter().zip(&col_w) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        if !self.verdicts.is_empty() {
            out.push('\n');
            for v in &self.verdicts {
                let mark = if v.holds { "PASS" } else { "FAIL" };
                let _ = writeln!(out, "[{mark}] {}: {}", v.name, v.detail);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{DelayStats, PacketRecord};
    use crate::sim::SimTime;

    fn summary(seed: u64, pdr: f64, delay: (f64, f64)) -> RunSummary {
        let mut m = MetricsSummary::from_records(&[] as &[PacketRecord], 4000.0 + seed as f64, 0);
        m.pdr = Some(pdr);
        m.delay = Some(DelayStats {
            min_s: delay.0 / 2.0,
            max_s: delay.1,
            mean_s: delay.0,
        });
        RunSummary {
            seed,
            mac: MacKind::Ieee80211,
            metrics: m,
            energy_by_mode_j: BTreeMap::new(),
            depleted_at_s: None,
            projected_lifetime_s: None,
            events: 0,
        }
    }

    #[test]
    fn single_run_has_no_spread() {
        let s = Stat::of([Some(3.0)]);
        assert_eq!((s.mean, s.std, s.n), (Some(3.0), None, 1));
        assert_eq!(Stat::of([None, None]).mean, None);
    }

    #[test]
    fn sample_standard_deviation() {
        let s = Stat::of([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0].map(Some));
        assert_eq!(s.mean, Some(5.0));
        assert!((s.std.unwrap() - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_means_match_runs() {
        let sc = Scenario::default();
        let runs = vec![summary(1, 0.9, (0.01, 0.05)), summary(2, 0.8, (0.03, 0.04))];
        let a = Aggregate::from_runs(&sc, runs);
        assert!((a.pdr.mean.unwrap() - 0.85).abs() < 1e-12);
        assert!((a.mean_delay_s.mean.unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(a.delay_spike_runs, 1);
        let back: Aggregate = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }

    fn aggregate_for(kind: MacKind) -> Aggregate {
        let mut sc = Scenario::default();
        sc.mac.kind = kind;
        let mut r = summary(1, 0.9, (0.01, 0.05));
        r.mac = kind;
        Aggregate::from_runs(&sc, vec![r])
    }

    #[test]
    fn compare_rejects_duplicates_and_unfair_pairs() {
        let a = aggregate_for(MacKind::Ieee80211);
        assert!(matches!(compare(&[a.clone(), a.clone()]), Err(Error::Compare(_))));
        let mut b = aggregate_for(MacKind::Smac);
        b.scenario.horizon_s = 300.0;
        assert!(matches!(compare(&[a, b]), Err(Error::Compare(_))));
    }

    #[test]
    fn single_column_has_no_verdicts() {
        let c = compare(&[aggregate_for(MacKind::Tdma)]).unwrap();
        assert_eq!(c.columns.len(), 1);
        assert!(c.verdicts.is_empty());
    }

    #[test]
    fn four_columns_carry_protocol_verdicts() {
        let aggs: Vec<Aggregate> = MacKind::ALL.iter().map(|&k| aggregate_for(k)).collect();
        let c = compare(&aggs).unwrap();
        assert_eq!(c.columns.len(), 4);
        assert_eq!(c.verdicts.len(), 7);
        // identical columns cannot be strictly ordered
        assert!(c.verdicts.iter().all(|v| !v.holds || v.name.starts_with("smac delay spikes")));
        assert_eq!(c.to_table(), compare(&aggs).unwrap().to_table());
    }

    #[test]
    fn packet_csv_columns() {
        let sc = Scenario {
            horizon_s: 12.0,
            ..Scenario::default()
        };
        let r = simulate(&sc, 1, &RunOptions::default());
        let text = packets_csv(&r);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "packet_id,send_s,outcome,recv_s,delay_s,drop_reason,hops"
        );
        assert_eq!(lines.count(), r.records.len());
        assert!(r.records.iter().all(|p| p.sent >= SimTime::from_secs(10.0)));
    }
}
