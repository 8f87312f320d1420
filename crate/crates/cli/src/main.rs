//! `interconnect`: run scenarios, validate scenario files, print finality tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use interconnect_core::finality::{acceptance_period, min_confirmations, SecurityLevel};
use interconnect_core::harness::{fmt9, run_batch, Scenario};
use interconnect_core::{harness, Error};

#[derive(Parser)]
#[command(name = "interconnect", version, about = "Inter-chain relay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics and audit logs.
    Run(RunArgs),
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print required confirmations and advisory wait per policy.
    FinalityTable(TableArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $INTERCONNECT_OUT, then the scenario's
    /// `[output] dir`, then `out`.
    #[arg(long, env = "INTERCONNECT_OUT")]
    out: Option<PathBuf>,
    /// Independent runs with seeds seed, seed+1, ...; writes trials.csv and a merged summary.
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Args)]
struct TableArgs {
    /// Adversary mining-power fraction.
    #[arg(long, requires = "interval", conflicts_with = "scenario")]
    q: Option<f64>,
    /// Mean block interval in seconds.
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long, conflicts_with = "level")]
    epsilon: Option<f64>,
    /// HIGH, MED or LOW.
    #[arg(long)]
    level: Option<String>,
    /// Tabulate every policy of a scenario with each source chain's nominal
    /// interval and assumed adversary fraction.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Validate { scenario } => Scenario::load(&scenario)
            .map(|sc| {
                println!(
                    "ok: {} chains, {} policies, {} traffic streams, {} attacks",
                    sc.chains.len(),
                    sc.policies.len(),
                    sc.traffic.len(),
                    sc.attacks.len()
                );
            })
            .map_err(Failure::from),
        Command::FinalityTable(a) => table(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Invariant(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let mut sc = Scenario::load(&a.scenario)?;
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let out = a
        .out
        .or_else(|| sc.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match a.trials {
        Some(0) => return Err(Failure::Usage("--trials must be at least 1".into())),
        Some(n) => {
            let batch = run_batch(&sc, n)?;
            batch.write_artifacts(&out)?;
            println!(
                "{n} trials: delivered {} reversals {} -> {}",
                batch.total(|r| r.delivered),
                batch.total(|r| r.reversals_after_delivery),
                out.display()
            );
        }
        None => {
            let report = harness::run(&sc)?;
            report.write_artifacts(&out)?;
            let t = report.transfers;
            println!(
                "observed {} delivered {} dropped {} pending {} ledger {} -> {}",
                t.observed,
                t.delivered,
                t.dropped,
                t.pending + t.committed,
                t.ledger_len,
                out.display()
            );
        }
    }
    Ok(())
}

fn table(a: TableArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    if let Some(path) = &a.scenario {
        let sc = Scenario::load(path)?;
        for p in &sc.policies {
            let c = p.source.index();
            rows.push((sc.assumed_adversary[c], sc.chains[c].block_interval, p.epsilon));
        }
    } else {
        let (Some(q), Some(t)) = (a.q, a.interval) else {
            return Err(Failure::Usage("give --q and --interval, or --scenario".into()));
        };
        let epsilon = match (&a.epsilon, &a.level) {
            (Some(e), None) => *e,
            (None, Some(l)) => l.parse::<SecurityLevel>().map_err(Failure::Usage)?.epsilon(),
            (None, None) => SecurityLevel::Med.epsilon(),
            (Some(_), Some(_)) => unreachable!("clap rejects both"),
        };
        rows.push((q, t, epsilon));
    }
    println!("q,T,epsilon,z,advisory_seconds");
    for (q, t, epsilon) in rows {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!("block interval must be positive (got {t})")));
        }
        if q >= 0.5 && q <= 1.0 {
            println!("{},{},{},halted,", fmt9(q), fmt9(t), fmt9(epsilon));
            continue;
        }
        let z = min_confirmations(q, epsilon).map_err(|e| Failure::Other(e.into()))?;
        println!(
            "{},{},{},{z},{}",
            fmt9(q),
            fmt9(t),
            fmt9(epsilon),
            fmt9(acceptance_period(z, t))
        );
    }
    Ok(())
}
