//! Command-line front end: `fisher`, `simulate`, `estimate` and `reproduce`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TEMPRES_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tempres",
    version,
    about = "Separation estimation for two Gaussian pulses with Hermite-Gauss projections"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration; defaults apply to every missing field.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fisher information budget on the configured grid (fisher_report.csv).
    Fisher(CommonArgs),
    /// Monte Carlo detection records (records.csv).
    Simulate(CommonArgs),
    /// Separation estimates and their statistics (estimates.csv, stats.csv).
    Estimate {
        /// Records table written by `simulate`.
        records: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Figure data as a long-format CSV, optionally rendered to SVG.
    Reproduce {
        figure: Figure,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        svg: bool,
    },
}

/// Sizes the global worker pool from the environment, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one parsed invocation and returns the files written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fisher(common) => commands::fisher(&common),
        Command::Simulate(common) => commands::simulate(&common),
        Command::Estimate { records, common } => commands::estimate(&records, &common),
        Command::Reproduce { figure, common, svg } => commands::reproduce(figure, &common, svg),
    }
}
