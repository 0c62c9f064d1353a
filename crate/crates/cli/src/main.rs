//! `mlmc`: generate datasets, train, sweep and diagnose from one JSON config.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlmc_core::Execution;

use crate::commands::Context;
use crate::config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] mlmc_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(mlmc_core::Error::NonFinite(_) | mlmc_core::Error::NonConvergence { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mlmc", version, about = "Multi-level Monte Carlo training of neural operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSVs and checkpoints.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Evaluate batches sequentially.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for batch evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a multi-resolution dataset and write it to `dataset.path`.
    Generate,
    /// Train one schedule; writes train.csv and checkpoint.bin.
    Train {
        /// Continue from a checkpoint (overrides `run.resume`).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Baselines per level plus every (m, δ) run; writes pareto.csv.
    Sweep,
    /// Variance profile, gradient comparison and telescoping audit.
    Diagnose,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let config = Config::load(&path)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let exec = if cli.deterministic { Execution::Sequential } else { Execution::Parallel };
    let ctx = Context { config, out: cli.out, exec };
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train { resume } => commands::train_cmd(&ctx, resume.as_deref()),
        Command::Sweep => commands::sweep_cmd(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
