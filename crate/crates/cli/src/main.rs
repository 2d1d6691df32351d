//! `mstem`: prepare charging data, train and score forecasters, and run the
//! model comparison.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Bad flags, config values or command combinations.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "mstem", version, about = "Multi-station EV charging-load forecasting")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for data synthesis, initialization, dropout and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for compare.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate seeded synthetic charging events.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample an event file into the hourly per-station cache.
    Prepare {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a learned model and write a checkpoint plus an epoch log.
    Train {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Epoch log path (default: checkpoint path + `.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score one forecaster on the test segment.
    Evaluate {
        #[arg(long)]
        series: PathBuf,
        /// Trained model; without it `--model` must be ma or hi.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Metrics file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-station `origin,step,station,actual,predicted` rows.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train and score every model at every horizon.
    Compare {
        #[arg(long)]
        series: PathBuf,
        /// Report rows (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Aligned table (printed to stdout when --out is given).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Forecast the hours after the end of the series.
    Forecast {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(cli.seed, cli.workers, &cli.overrides);
    log::debug!("effective config:\n{}", cfg.to_toml());
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out),
        Command::Prepare { events, out } => commands::prepare(&cfg, &events, &out),
        Command::Train { series, out, log } => commands::train(&cfg, &series, &out, log),
        Command::Evaluate {
            series,
            checkpoint,
            out,
            trace,
        } => commands::evaluate(&cfg, &series, checkpoint.as_deref(), out.as_deref(), trace.as_deref()),
        Command::Compare { series, out, table } => {
            commands::compare(&cfg, &series, out.as_deref(), table.as_deref())
        }
        Command::Forecast {
            series,
            checkpoint,
            out,
        } => commands::forecast(&cfg, &series, checkpoint.as_deref(), out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<mstem::Error>() {
            return e.exit_code() as u8;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
