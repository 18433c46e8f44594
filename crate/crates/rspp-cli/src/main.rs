//! `rspp`: simulation and Bayesian inference for repulsive spatial point
//! processes.  Configuration comes from an optional TOML file; the flags
//! below override it, and every command echoes the merged configuration
//! into its manifest.

mod artifacts;
mod bench;
mod commands;
mod config;

use anyhow::Result;
use bench::Suite;
use clap::{Parser, Subcommand};
use config::{Algorithm, Config, ModelKind, Overrides};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "rspp",
    version,
    about = "Simulation and Bayesian inference for repulsive spatial point processes"
)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every stream of the run derives from it
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker count (also the repeat-batch size of the ABC kernels)
    #[arg(long, global = true, value_name = "I")]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one pattern from the configured model
    Simulate {
        /// Model to draw from (overrides the config file)
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Estimate the interaction radius by profile pseudo-likelihood
    EstimateRadius {
        /// Pattern CSV to profile
        pattern: PathBuf,
    },
    /// Pilot simulations, summary regression, and ABC thresholds
    Pilot {
        /// Observed pattern CSV (overrides the config file)
        #[arg(long)]
        observed: Option<PathBuf>,
        /// Model the pilot simulates from (overrides the config file)
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Run a posterior sampler and write the chain
    Infer {
        /// Sampling algorithm (overrides the config file)
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// Model to fit (overrides the config file)
        #[arg(long)]
        model: Option<ModelKind>,
        /// Observed pattern CSV (overrides the config file)
        #[arg(long)]
        observed: Option<PathBuf>,
    },
    /// Summaries and density exports for finished chains
    Diagnose {
        /// Chain CSV files to summarize
        #[arg(required = true)]
        chains: Vec<PathBuf>,
        /// Ground-truth chain the bias column is measured against
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Burn-in dropped from every candidate chain (default: the
        /// configured burn_in)
        #[arg(long)]
        burn_in: Option<usize>,
        /// Burn-in dropped from the reference chain (default: same as
        /// --burn-in)
        #[arg(long)]
        reference_burn_in: Option<usize>,
    },
    /// Run a scaled-down end-to-end study
    Bench {
        /// Which study to run
        suite: Suite,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::Simulate { model } => {
            overrides.model = *model;
            let config = Config::load(cli.config.as_deref(), &overrides)?;
            commands::cmd_simulate(&config)?;
        }
        Command::EstimateRadius { pattern } => {
            let config = Config::load(cli.config.as_deref(), &overrides)?;
            commands::cmd_estimate_radius(&config, pattern)?;
        }
        Command::Pilot { observed, model } => {
            overrides.observed = observed.clone();
            overrides.model = *model;
            let config = Config::load(cli.config.as_deref(), &overrides)?;
            commands::cmd_pilot(&config)?;
        }
        Command::Infer {
            algorithm,
            model,
            observed,
        } => {
            overrides.algorithm = *algorithm;
            overrides.model = *model;
            overrides.observed = observed.clone();
            let config = Config::load(cli.config.as_deref(), &overrides)?;
            commands::cmd_infer(&config)?;
        }
        Command::Diagnose {
            chains,
            reference,
            burn_in,
            reference_burn_in,
        } => {
            let config = Config::load(cli.config.as_deref(), &overrides)?;
            commands::cmd_diagnose(
                &config,
                chains,
                reference.as_deref(),
                *burn_in,
                *reference_burn_in,
            )?;
        }
        Command::Bench { suite } => {
            let config = Config::load(cli.config.as_deref(), &overrides)?;
            bench::cmd_bench(&config, *suite)?;
        }
    }
    Ok(())
}
