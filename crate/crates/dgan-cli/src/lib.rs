//! The `dgan` binary: one subcommand per pipeline stage, every stage
//! deterministic under `--seed` when run with `--threads 1`.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems,
//! 3 for data problems. Errors go to stderr; results go to files and
//! stdout.

use clap::{Parser, Subcommand};

use dgan_core::{Error, Result};

pub mod commands;
mod svg;

#[derive(Debug, Parser)]
#[command(name = "dgan", version, about = "Multi-class trajectory prediction pipeline")]
pub struct Cli {
    /// Seed overriding the command or config-file default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 1 (the default) is fully deterministic.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios from a spec file.
    Synth(commands::synth::SynthArgs),
    /// Convert a frame/id/x/y text recording into scenario files.
    Import(commands::import::ImportArgs),
    /// Build per-class anchor trajectories from scenario data.
    Anchors(commands::anchors::AnchorsArgs),
    /// Train a model; writes a checkpoint and a CSV loss log.
    Train(commands::train::TrainArgs),
    /// Forecast one scenario's agents, as JSON or an SVG overlay.
    Predict(commands::predict::PredictArgs),
    /// Score a checkpoint (and optional baselines) over a dataset.
    Eval(commands::eval::EvalArgs),
    /// Render a scenario's semantic map to an image.
    Rasterize(commands::rasterize::RasterizeArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Synth(args) => commands::synth::run(args, cli.seed.unwrap_or(0)),
        Command::Import(args) => commands::import::run(args),
        Command::Anchors(args) => commands::anchors::run(args, cli.seed.unwrap_or(0)),
        Command::Train(args) => commands::train::run(args, cli.seed),
        Command::Predict(args) => commands::predict::run(args),
        Command::Eval(args) => commands::eval::run(args, cli.seed),
        Command::Rasterize(args) => commands::rasterize::run(args),
    }
}

/// Exit code for a failed run: data problems are distinguishable from
/// everything else so calling scripts can react.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::DuplicateObservation { .. }
        | Error::InsufficientData(_)
        | Error::InsufficientHistory { .. } => 3,
        _ => 2,
    }
}
