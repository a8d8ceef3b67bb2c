//! `rmloss`: generate synthetic segmentation data, train with the
//! coordinate-weighted residual loss, evaluate checkpoints, and run the
//! verification suite.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric error,
//! 3 verification failure.

mod commands;
mod config;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CmdError;

#[derive(Parser)]
#[command(name = "rmloss", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory from a generator config.
    #[command(name = "gen-data")]
    GenData {
        /// Generator config JSON ({"kind": "synth2d", ...}).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model per seed from an experiment config.
    Train {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single seed, overriding the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Loss preset: baseline | mse | rm-2d-best | rm-3d-best.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        /// RMCK checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metric reports.
        #[arg(long)]
        out: PathBuf,
        /// Also write PPM contour overlays (2D only).
        #[arg(long)]
        overlays: bool,
    },
    /// Run the invariant suite and print a machine-readable report.
    Verify,
}

fn run() -> Result<(), CmdError> {
    let cli = Cli::try_parse().map_err(|e| CmdError::usage(e.to_string()))?;
    match cli.command {
        Command::GenData { config, out, seed } => commands::gen_data(&config, out, seed),
        Command::Train {
            config,
            out,
            seed,
            preset,
        } => commands::train_cmd(&config, out, seed, preset),
        Command::Eval {
            checkpoint,
            data,
            out,
            overlays,
        } => commands::eval_cmd(&checkpoint, &data, &out, overlays),
        Command::Verify => commands::verify_cmd(),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code as u8)
        }
    }
}
