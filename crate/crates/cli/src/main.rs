//! `tsae` command-line driver.
//!
//! Exit codes: 0 success, 2 I/O or unreadable data, 3 numerical failure,
//! 4 configuration or shape mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tsae", version, about = "Two-timescale battery autoencoder")]
pub struct Cli {
    /// Run configuration (JSON); defaults are used for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the command (generation or training).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only warnings and errors on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorKind {
    Model,
    Oracle,
    Persistence,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset and write it as CSV.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model into a run directory.
    Train {
        /// Dataset CSV; defaults to the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// One run per value, e.g. `n_xs=1..5` or `n_xs=1,2,4`.
        #[arg(long, conflicts_with = "resume")]
        sweep: Option<String>,
        /// Continue from a checkpoint; `train.max_epochs` is the total budget.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Multi-step evaluation on the held-out cycles.
    Eval {
        /// Required for the `model` predictor.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "model")]
        predictor: PredictorKind,
    },
    /// Export latent states at a fixed SOC and/or across one cycle.
    InspectLatent {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// SOC at which each cycle's latent is taken.
        #[arg(long)]
        soc: Option<f64>,
        /// Cycle index whose latent trajectory is exported.
        #[arg(long)]
        cycle: Option<usize>,
        /// Cell of `--cycle` when the dataset has several.
        #[arg(long)]
        cell: Option<String>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tsae::Error>() {
            return match e.kind() {
                tsae::ErrorKind::Io => 2,
                tsae::ErrorKind::Numerical => 3,
                tsae::ErrorKind::Mismatch => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if cause.is::<serde_json::Error>() {
            return 4;
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("TSAE_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        tsae::Error::Config(format!(
            "TSAE_THREADS must be a positive integer, got `{value}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match init_threads().and_then(|()| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
