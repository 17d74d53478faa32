//! Command-line experiment harness: config handling, cached truth solves,
//! and the CSV-producing experiments.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "nlrm", version, about = "Reduced-model experiments emitting CSV")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Error against terms for a-priori Taylor, adaptive Taylor and greedy bases.
    LinearCompare(CommandArgs),
    /// Terms needed per cell count (or per eta) with graded partitions.
    PartitionTable(CommandArgs),
    /// Inf-sup constants and recovery errors, global and per cell.
    StateEst(CommandArgs),
    /// Closed-form library size bounds.
    Bounds(CommandArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommandArgs {
    /// TOML file with the same keys as the flags (underscores instead of dashes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::LinearCompare(_) => "linear-compare",
            Command::PartitionTable(_) => "partition-table",
            Command::StateEst(_) => "state-est",
            Command::Bounds(_) => "bounds",
        }
    }

    fn args(&self) -> &CommandArgs {
        match self {
            Command::LinearCompare(a) | Command::PartitionTable(a) | Command::StateEst(a) | Command::Bounds(a) => a,
        }
    }
}

/// Config file, then flags on top.
pub fn resolve_config(command: &Command) -> Result<ExperimentConfig> {
    let args = command.args();
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    cfg.validate(command.name())?;
    Ok(cfg.resolved(command.name(), commands::default_cells(command.name())))
}

/// Runs one subcommand and returns the rendered CSV.
pub fn render(command: &Command) -> Result<(ExperimentConfig, Vec<u8>)> {
    let cfg = resolve_config(command)?;
    let table = match command {
        Command::LinearCompare(_) => commands::linear_compare(&cfg)?,
        Command::PartitionTable(_) => commands::partition_table(&cfg)?,
        Command::StateEst(_) => commands::state_est(&cfg)?,
        Command::Bounds(_) => commands::bounds(&cfg)?,
    };
    let bytes = table.render(command.name(), &cfg)?;
    Ok((cfg, bytes))
}

pub fn run(cli: &Cli) -> Result<()> {
    let (cfg, bytes) = render(&cli.command)?;
    output::emit(&bytes, cfg.output.as_deref())
}
