//! The `glmm` command line: `simulate`, `sample`, `fit` and `summary`.
//!
//! Exit codes: 0 on success, 2 for configuration, data and I/O problems,
//! 3 for numerical failures.

pub mod chainfile;
pub mod commands;
pub mod config;
pub mod dataset;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "glmm", version, about = "MCMC sampling and likelihood fitting for GLMMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set run.n_iter=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> crate::error::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset; writes <out>.csv and <out>.truth.json.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sampler; writes <out>.csv, <out>.meta.json and <out>.summary.txt.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Chains run concurrently.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Estimate (beta, lambda) by MCEM or MCML.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render diagnostics for a stored chain.
    Summary {
        #[arg(long)]
        chain: PathBuf,
        /// When given, must match the configuration recorded with the chain.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        max_lag: usize,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::UnsupportedModel(_) => 2,
        _ => 3,
    }
}

/// Runs a parsed command and returns its standard output.
pub fn run(cli: &Cli) -> crate::error::Result<String> {
    match &cli.command {
        Command::Simulate { cfg, out } => commands::cmd_simulate(&cfg.load()?, out),
        Command::Sample { cfg, data, out, threads } => commands::cmd_sample(&cfg.load()?, data, out, *threads),
        Command::Fit { cfg, data, out } => commands::cmd_fit(&cfg.load()?, data, out),
        Command::Summary {
            chain,
            config,
            overrides,
            seed,
            max_lag,
        } => {
            let cfg = if config.is_some() || !overrides.is_empty() || seed.is_some() {
                Some(RunConfig::load(config.as_deref(), overrides, *seed)?)
            } else {
                None
            };
            commands::cmd_summary(chain, cfg.as_ref(), *max_lag)
        }
    }
}
