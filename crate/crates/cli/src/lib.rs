//! Experiment harness library: simulate planted datasets, fit models,
//! evaluate accuracy and reproducibility, and grid-search the sparsity
//! budget.
//!
//! Every command is deterministic given its config and seed. Exit codes:
//! 0 success/converged, 2 iteration cap hit without convergence, 3 invalid
//! input, 4 I/O failure.

pub mod archive;
pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, bad data, dimension mismatch: exit code 3.
    Invalid(String),
    /// Filesystem failure: exit code 4.
    Io(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn from_core(e: hscp_core::Error) -> Self {
        CliError::Invalid(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[allow(missing_docs)]
#[command(
    name = "hscp",
    about = "Hierarchical sparse correlation factorization experiments",
    version
)]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<String>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the config method (hscp | adv-hscp).
    #[arg(long, global = true)]
    pub method: Option<String>,

    /// Output directory (overrides config "output").
    #[arg(long, global = true)]
    pub out: Option<String>,

    /// Worker thread cap (falls back to HSCP_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted synthetic dataset with its ground truth.
    Simulate,
    /// Fit a model to a dataset and archive it.
    Fit,
    /// Evaluate accuracy against ground truth or split-sample reproducibility.
    Eval,
    /// Grid-search the sparsity budget by reproducibility.
    Grid,
}

pub fn configure_threads(flag: Option<usize>, config: Option<usize>) -> Result<(), CliError> {
    let from_env = std::env::var("HSCP_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env).or(config) {
        if n == 0 {
            return Err(CliError::invalid("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::invalid("--config <path> is required"))?;
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.fit.seed = seed;
    }
    configure_threads(cli.threads, config.threads)?;
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&config, cli.out.as_deref()),
        Command::Fit => commands::cmd_fit(&config, cli.method.as_deref(), cli.out.as_deref()),
        Command::Eval => commands::cmd_eval(&config, cli.out.as_deref()),
        Command::Grid => commands::cmd_grid(&config, cli.out.as_deref()),
    }
}

