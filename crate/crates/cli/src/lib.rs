//! Command-line harness: configuration, orchestration and output layout.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "gelsim", version, about = "Simulated soft tactile finger: render, design, train, reconstruct")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Also run brute-force reference modes and compare.
    #[arg(long, global = true)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    Normals,
    Autoencoder,
    Proprio,
}

impl TrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            TrainTarget::Normals => "normals",
            TrainTarget::Autoencoder => "autoencoder",
            TrainTarget::Proprio => "proprio",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render every (scenario, indent) pair.
    Render,
    /// Exhaustive colour-assignment search.
    OptimizeDesign,
    /// Generate the bending dataset.
    GenerateDataset,
    /// Train one model.
    Train {
        target: TrainTarget,
        /// Continue from the checkpoint on disk.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs (the checkpoint stays resumable).
        #[arg(long)]
        until_epoch: Option<usize>,
    },
    /// Held-out proprioception metrics and latency.
    Evaluate,
    /// Tactile reconstruction of the pyramid sweep or of a given image.
    Reconstruct,
}

/// Parse the config, apply overrides and validate.
pub fn load_config(global: &GlobalArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => return Err(CliError::Config("--config is required".into())),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &global.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(&cli.global)?;
    gelsim::par::set_sequential(cli.global.deterministic);
    let ctx = commands::Context {
        cfg,
        oracle: cli.global.oracle,
    };
    match &cli.command {
        Command::Render => commands::render::run(&ctx),
        Command::OptimizeDesign => commands::design::run(&ctx),
        Command::GenerateDataset => commands::dataset::run(&ctx).map(|_| ()),
        Command::Train {
            target,
            resume,
            until_epoch,
        } => commands::train::run(&ctx, *target, *resume, *until_epoch),
        Command::Evaluate => commands::evaluate::run(&ctx),
        Command::Reconstruct => commands::reconstruct::run(&ctx),
    }
}
