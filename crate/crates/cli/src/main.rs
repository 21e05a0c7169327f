use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swaphedge_cli::pipeline::{BASELINE_DIR, PERTURBED_DIR};
use swaphedge_cli::{CliError, ExperimentConfig, Result, Workspace};

#[derive(Debug, Parser)]
#[command(name = "swaphedge", version, about = "Deep hedging of a payer swaption under a three-factor arbitrage-free Nelson-Siegel model")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the master seed of the configuration.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, env = "SWAPHEDGE_ARTIFACTS")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write evaluation factor paths.
    Simulate {
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Monte Carlo pricing dataset.
    PriceDataset,
    /// Train the swaption pricer on the stored dataset.
    TrainPricer,
    /// Train one hedging agent per configured objective.
    TrainHedger,
    /// Run every strategy on the evaluation paths and write the report.
    Evaluate,
    /// Same, on paths from the perturbed physical dynamics.
    PerturbEvaluate,
    /// Rebuild the metrics tables from stored runs.
    Report,
    /// Check every artifact hash and replay the stored runs.
    Verify,
    /// All steps in order.
    Run,
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed_override {
        cfg.seed = seed;
    }
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    let mut ws = Workspace::open(cfg, &root)?;
    match cli.command {
        Command::Simulate { n } => ws.simulate(n)?,
        Command::PriceDataset => ws.price_dataset()?,
        Command::TrainPricer => ws.train_pricer()?,
        Command::TrainHedger => ws.train_hedgers()?,
        Command::Evaluate => ws.evaluate(BASELINE_DIR)?,
        Command::PerturbEvaluate => ws.evaluate(PERTURBED_DIR)?,
        Command::Report => {
            ws.report(BASELINE_DIR)?;
            if root.join(PERTURBED_DIR).join("runs").exists() {
                ws.report(PERTURBED_DIR)?;
            }
        }
        Command::Verify => {
            let checked = ws.verify()?;
            println!("verified {} artifacts, replayed {} outputs", ws.manifest.artifacts.len(), checked.len());
        }
        Command::Run => ws.run_all()?,
    }
    println!("artifacts in {}", root.display());
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
