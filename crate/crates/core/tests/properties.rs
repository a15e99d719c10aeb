//! Whole-run invariants, checked for every MAC on shortened scenarios.

use std::collections::HashSet;

use wsnsim::engine::{simulate, RunOptions};
use wsnsim::mac::MacKind;
use wsnsim::metrics::Outcome;
use wsnsim::report::{energy_csv, packets_csv, trace_log};
use wsnsim::scenario::Scenario;

fn short(kind: MacKind) -> Scenario {
    let mut sc = Scenario::default();
    sc.mac.kind = kind;
    sc.horizon_s = 80.0;
    sc
}

#[test]
fn replay_is_byte_identical() {
    for kind in MacKind::ALL {
        let sc = short(kind);
        let opts = RunOptions { trace: true };
        let a = simulate(&sc, 4, &opts);
        let b = simulate(&sc, 4, &opts);
        assert_eq!(packets_csv(&a), packets_csv(&b), "{kind}");
        assert_eq!(energy_csv(&a), energy_csv(&b), "{kind}");
        assert_eq!(trace_log(&a), trace_log(&b), "{kind}");
        let c = simulate(&sc, 5, &opts);
        assert_ne!(trace_log(&a), trace_log(&c), "{kind}: seeds should matter");
    }
}

#[test]
fn tracing_does_not_change_results() {
    for kind in MacKind::ALL {
        let sc = short(kind);
        let plain = simulate(&sc, 6, &RunOptions::default());
        let traced = simulate(&sc, 6, &RunOptions { trace: true });
        assert_eq!(packets_csv(&plain), packets_csv(&traced), "{kind}");
    }
}

#[test]
fn every_packet_has_one_terminal_outcome() {
    for kind in MacKind::ALL {
        for seed in 1..=3 {
            let sc = short(kind);
            let r = simulate(&sc, seed, &RunOptions::default());
            let ids: HashSet<u64> = r.records.iter().map(|p| p.id).collect();
            assert_eq!(ids.len(), r.records.len(), "{kind}: duplicate packet ids");
            let s = &r.summary;
            assert_eq!(s.received + s.dropped + s.in_flight, s.generated);
            let by_reason: u64 = s.drops_by_reason.values().sum();
            assert_eq!(by_reason, s.dropped);
            let expected = ((sc.horizon_s - sc.cbr.start_s) / sc.cbr.interval_s).round() as u64;
            assert_eq!(s.generated, expected, "{kind}");
            for p in &r.records {
                match p.outcome {
                    Outcome::Received { at } | Outcome::Dropped { at, .. } => {
                        assert!(at >= p.sent && at.secs() <= sc.horizon_s, "{kind}: {p:?}")
                    }
                    Outcome::InFlight => {}
                }
            }
        }
    }
}

#[test]
fn vehicle_energy_is_conserved() {
    for kind in MacKind::ALL {
        let sc = short(kind);
        let r = simulate(&sc, 2, &RunOptions::default());
        let spent: f64 = r.energy.per_mode_j().iter().sum();
        let initial = sc.energy.initial_j;
        assert!((initial - r.energy.residual() - spent).abs() < 1e-9, "{kind}");
        let from_intervals: f64 = r
            .energy
            .intervals()
            .iter()
            .map(|iv| sc.energy.power(iv.mode) * iv.duration)
            .sum();
        assert!((from_intervals - spent).abs() < 1e-9, "{kind}");
        let seconds: f64 = r.energy.per_mode_s().iter().sum();
        assert!((seconds - sc.horizon_s).abs() < 1e-6, "{kind}: accounted {seconds} s");
        let series = r.energy.series();
        assert!(series.windows(2).all(|w| w[1].1 <= w[0].1), "{kind}: residual rose");
    }
}
