use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsnsim::engine::RunOptions;
use wsnsim::mac::MacKind;
use wsnsim::report::{compare, run, write_report, Aggregate};
use wsnsim::scenario::{load_scenario, Scenario};
use wsnsim::{Error, Result};

const OUT_DIR_ENV: &str = "WSNSIM_OUT_DIR";

#[derive(Parser)]
#[command(name = "wsnsim", version, about = "Vehicle emission monitoring network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of one scenario and write per-run files plus an aggregate.
    Run(RunArgs),
    /// Run (or load) several MAC variants of one scenario and tabulate them.
    Compare(CompareArgs),
    /// Check a scenario file and print the resolved configuration.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Single seed, overriding the scenario's list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as `1,2,5` or `1-10`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Vec<u64>>,
    /// Output directory [default: $WSNSIM_OUT_DIR or ./wsnsim-out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write a per-event trace log for each run.
    #[arg(long)]
    trace: bool,
    /// Worker threads for replications [default: available cores].
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// MAC protocol, overriding the scenario.
    #[arg(long)]
    mac: Option<MacKind>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Additional scenario files, one per column.
    #[arg(long = "with")]
    with: Vec<PathBuf>,
    /// MAC list (comma separated) applied to a single scenario.
    #[arg(long, value_delimiter = ',')]
    mac: Vec<MacKind>,
    /// Compare finished runs: directories holding `aggregate.json`.
    #[arg(long, conflicts_with_all = ["with", "mac", "scenario"])]
    from: Vec<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    mac: Option<MacKind>,
}

fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            if b < a {
                return Err(format!("empty seed range `{part}`"));
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

fn base_scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => load_scenario(p),
        None => Ok(Scenario::default()),
    }
}

fn apply_overrides(sc: &mut Scenario, common: &Common, mac: Option<MacKind>) -> Result<()> {
    if let Some(m) = mac {
        sc.mac.kind = m;
    }
    if let Some(s) = common.seed {
        sc.seeds = vec![s];
    }
    if let Some(s) = &common.seeds {
        sc.seeds = s.clone();
    }
    sc.validate()?;
    Ok(())
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wsnsim-out"))
}

fn jobs(common: &Common) -> usize {
    common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_one(sc: &Scenario, common: &Common, dir: &Path) -> Result<Aggregate> {
    eprintln!("running {} over {} seed(s)", sc.mac.kind, sc.seeds.len());
    let opts = RunOptions { trace: common.trace };
    let report = run(sc, &opts, jobs(common));
    write_report(&report, dir)?;
    Ok(report.aggregate)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.digits$}"))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut sc = base_scenario(args.common.scenario.as_deref())?;
    apply_overrides(&mut sc, &args.common, args.mac)?;
    let dir = out_dir(&args.common);
    let agg = run_one(&sc, &args.common, &dir)?;
    println!("mac                 {}", agg.mac);
    println!("runs                {}", agg.runs.len());
    println!("pdr                 {}", fmt_opt(agg.pdr.mean, 4));
    println!("mean delay (s)      {}", fmt_opt(agg.mean_delay_s.mean, 6));
    println!("max delay (s)       {}", fmt_opt(agg.max_delay_s.mean, 6));
    println!("residual energy (J) {}", fmt_opt(agg.residual_energy_j.mean, 3));
    println!("output              {}", dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let aggregates = if !args.from.is_empty() {
        args.from
            .iter()
            .map(|d| Aggregate::load(&d.join("aggregate.json")))
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut scenarios = Vec::new();
        let base = base_scenario(args.common.scenario.as_deref())?;
        if args.with.is_empty() {
            let macs = if args.mac.is_empty() { MacKind::ALL.to_vec() } else { args.mac.clone() };
            for m in macs {
                let mut sc = base.clone();
                apply_overrides(&mut sc, &args.common, Some(m))?;
                scenarios.push(sc);
            }
        } else {
            if !args.mac.is_empty() {
                return Err(Error::Compare("--mac cannot be combined with --with".into()));
            }
            let mut first = base;
            apply_overrides(&mut first, &args.common, None)?;
            scenarios.push(first);
            for p in &args.with {
                let mut sc = load_scenario(p)?;
                apply_overrides(&mut sc, &args.common, None)?;
                scenarios.push(sc);
            }
        }
        // reject unfair or duplicate columns before spending time on runs
        let dry: Vec<Aggregate> = scenarios.iter().map(|s| Aggregate::from_runs(s, Vec::new())).collect();
        compare(&dry)?;
        let dir = out_dir(&args.common);
        scenarios
            .iter()
            .map(|sc| run_one(sc, &args.common, &dir.join(sc.mac.kind.name())))
            .collect::<Result<Vec<_>>>()?
    };
    let table = compare(&aggregates)?;
    let text = table.to_table();
    print!("{text}");
    if args.from.is_empty() || args.common.out_dir.is_some() {
        let dir = out_dir(&args.common);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let txt = dir.join("comparison.txt");
        std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join("comparison.json");
        std::fs::write(&json, table.to_json()).map_err(|e| Error::io(&json, e))?;
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let mut sc = load_scenario(&args.scenario)?;
    if let Some(m) = args.mac {
        sc.mac.kind = m;
        sc.validate()?;
    }
    println!("{}: ok ({} nodes, mac {})", args.scenario.display(), sc.node_count(), sc.mac.kind);
    print!("{}", sc.to_toml_string());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        Error::Compare(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
