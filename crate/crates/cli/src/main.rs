//! `pose-sim`: run scenarios, re-check traces, and evaluate the liveness analysis.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use pose_core::analysis::{self, LivenessQuery, SweepGrid};
use pose_core::harness::scenario::SCHEMA_VERSION;
use pose_core::harness::{monitors, oracle, run, Scenario, Trace};

const SEED_VAR: &str = "POSE_SIM_SEED";

#[derive(Parser)]
#[command(name = "pose-sim", version, about)]
struct Cli {
    /// Worker threads for Monte Carlo trials and scenario batches.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios; writes trace.jsonl and metrics.json per scenario.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Output directory; several scenarios get one subdirectory each.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Liveness figures for n enclaves, m of them byzantine, pools of s.
    Analyze {
        n: u64,
        m: u64,
        s: u64,
        #[arg(long)]
        contracts: Option<u64>,
        /// Also estimate the crash probability by sampling.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Re-check a trace file offline.
    Replay { trace: PathBuf },
    /// Validate a scenario without running it.
    Check { scenario: PathBuf },
    /// Liveness figures over a parameter grid.
    Sweep {
        /// JSON grid with fields n, byzantine_percent, s, contracts.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Exit 2: the input could not be used at all.
#[derive(Debug)]
struct Usage(anyhow::Error);

enum Verdict {
    Pass,
    Fail,
}

type CmdResult = Result<Verdict, Usage>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Usage {
    Usage(e.into())
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema_version: u32,
    scenario: &'a str,
    seed: u64,
    complete: bool,
    violations: &'a [monitors::Violation],
    oracle: Option<String>,
    metrics: &'a analysis::Metrics,
}

fn load_scenario(path: &Path) -> Result<Scenario, Usage> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    let mut sc = Scenario::from_json(&text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    if let Ok(v) = std::env::var(SEED_VAR) {
        sc.seed = v.trim().parse().map_err(|_| usage(anyhow!("{SEED_VAR} must be an unsigned integer, got {v:?}")))?;
    }
    Ok(sc)
}

fn run_one(path: &Path, out: &Path) -> CmdResult {
    let sc = load_scenario(path)?;
    let r = run(&sc).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    let report = monitors::check(&r.trace);
    let verdict = oracle::check(&sc, &r);
    let metrics = analysis::measure(&r.trace).map_err(usage)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(usage)?;
    fs::write(out.join("trace.jsonl"), r.trace.to_jsonl()).map_err(usage)?;
    let summary = RunReport {
        schema_version: SCHEMA_VERSION,
        scenario: &sc.name,
        seed: sc.seed,
        complete: r.complete,
        violations: &report.violations,
        oracle: verdict.as_ref().err().map(|e| e.to_string()),
        metrics: &metrics,
    };
    let json = serde_json::to_string_pretty(&summary).expect("reports serialize");
    fs::write(out.join("metrics.json"), json + "\n").map_err(usage)?;

    let name = path.display();
    for v in &report.violations {
        eprintln!("{name}: [{}] line {}: {}", v.monitor, v.seq, v.detail);
    }
    if let Err(e) = &verdict {
        eprintln!("{name}: [oracle] {e}");
    }
    let pass = report.ok() && verdict.is_ok();
    println!(
        "{name}: {} (onchain {}, challenge txs {}, requests {})",
        if pass { "pass" } else { "FAIL" },
        metrics.onchain,
        metrics.challenge_txs,
        metrics.requests.len()
    );
    Ok(if pass { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_run(scenarios: &[PathBuf], out: &Path) -> CmdResult {
    if let [one] = scenarios {
        return run_one(one, out);
    }
    let results: Vec<CmdResult> = scenarios
        .par_iter()
        .map(|p| {
            let stem = p.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
            run_one(p, &out.join(stem))
        })
        .collect();
    let mut verdict = Verdict::Pass;
    for r in results {
        if let Verdict::Fail = r? {
            verdict = Verdict::Fail;
        }
    }
    Ok(verdict)
}

#[derive(Serialize)]
struct Analysis {
    n: u64,
    m: u64,
    s: u64,
    epsilon: f64,
    crash: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    contracts: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    no_crash: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<analysis::CrashEstimate>,
}

fn cmd_analyze(n: u64, m: u64, s: u64, contracts: Option<u64>, trials: Option<u64>, seed: u64, json: bool) -> CmdResult {
    let q = LivenessQuery::new(n, m, s).map_err(usage)?;
    let no_crash = contracts.map(|k| analysis::system_no_crash_prob(&q, k).expect("validated"));
    let monte_carlo = trials.map(|t| analysis::monte_carlo_crash(&q, t, seed)).transpose().map_err(usage)?;
    let a = Analysis {
        n,
        m,
        s,
        epsilon: analysis::liveness_epsilon(&q).expect("validated"),
        crash: analysis::crash_probability(&q).expect("validated"),
        contracts,
        no_crash,
        monte_carlo,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&a).expect("analysis serializes"));
        return Ok(Verdict::Pass);
    }
    println!("epsilon  {:.12}", a.epsilon);
    println!("crash    {:.6e}", a.crash);
    if let (Some(k), Some(p)) = (a.contracts, a.no_crash) {
        println!("no crash {p:.12} over {k} contracts");
    }
    if let Some(e) = a.monte_carlo {
        println!(
            "sampled  {:.6e} in [{:.6e}, {:.6e}] ({} of {} trials), formula {}",
            e.estimate,
            e.lo,
            e.hi,
            e.crashes,
            e.trials,
            if e.contains(a.crash) { "inside" } else { "outside" }
        );
    }
    Ok(Verdict::Pass)
}

fn cmd_replay(path: &Path) -> CmdResult {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    let trace = match Trace::from_jsonl(&text) {
        Ok(t) => t,
        Err(e @ pose_core::harness::trace::TraceError::Tampered(_)) => {
            eprintln!("{}: {e}", path.display());
            return Ok(Verdict::Fail);
        }
        Err(e) => return Err(usage(anyhow!("{}: {e}", path.display()))),
    };
    let report = monitors::check(&trace);
    for v in &report.violations {
        eprintln!("{}: [{}] line {}: {}", path.display(), v.monitor, v.seq, v.detail);
    }
    println!("{}: {} ({} lines)", path.display(), if report.ok() { "pass" } else { "FAIL" }, trace.lines().len());
    Ok(if report.ok() { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_check(path: &Path) -> CmdResult {
    let sc = load_scenario(path)?;
    let t = sc.timeout_config().map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    println!(
        "{}: ok (n {}, pool {}, seed {}, {} actions, executor timeout {} blocks)",
        path.display(),
        sc.n,
        sc.pool_size,
        sc.seed,
        sc.workload.len(),
        t.onchain_execution
    );
    Ok(Verdict::Pass)
}

fn cmd_sweep(grid: Option<&Path>, format: Format, out: Option<&Path>) -> CmdResult {
    let grid = match grid {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
            serde_json::from_str::<SweepGrid>(&text).with_context(|| format!("parsing {}", p.display())).map_err(usage)?
        }
        None => SweepGrid::default(),
    };
    let rows = analysis::sweep(&grid);
    let text = match format {
        Format::Csv => analysis::to_csv(&rows),
        Format::Json => analysis::to_json(&rows) + "\n",
    };
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(usage)?,
        None => print!("{text}"),
    }
    Ok(Verdict::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.cmd {
        Command::Run { scenarios, out } => cmd_run(scenarios, out),
        Command::Analyze { n, m, s, contracts, trials, seed, json } => {
            cmd_analyze(*n, *m, *s, *contracts, *trials, *seed, *json)
        }
        Command::Replay { trace } => cmd_replay(trace),
        Command::Check { scenario } => cmd_check(scenario),
        Command::Sweep { grid, format, out } => cmd_sweep(grid.as_deref(), *format, out.as_deref()),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
