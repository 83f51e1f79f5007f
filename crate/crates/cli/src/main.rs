//! `pcr` — batch driver for dynamic-point filtering, trajectory evaluation
//! and synthetic scene generation.
//!
//! Exit codes: 0 on success, 2 for input or usage errors, 3 for runtime
//! failures. Every command writes only under its `--out` directory and ends
//! by atomically writing `run_manifest.json` there.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed inputs, invalid configuration.
    #[error("{0}")]
    Input(String),
    /// Failures after the inputs were accepted.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "pcr",
    version,
    about = "Dynamic-point filtering and trajectory evaluation"
)]
pub struct Cli {
    /// Flat `key = value` TOML pipeline configuration.
    #[arg(long, global = true, env = "PCR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads; 1 runs every kernel sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Kitti,
    Tum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Ape,
    Rpe,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filters per-frame points against detections and refines poses.
    Filter {
        /// Directory of `NNNNNN.txt` point files.
        #[arg(long)]
        points: PathBuf,
        /// Detection JSONL file, or a directory of `NNNNNN.jsonl` files.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Absolute or relative pose error between two trajectories.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "ape")]
        mode: Metric,
        /// Align the estimate to the ground truth before measuring.
        #[arg(long)]
        align: bool,
        /// Also estimate a scale when aligning.
        #[arg(long)]
        scale: bool,
        /// Frame gap for the relative error.
        #[arg(long, default_value_t = 1)]
        delta: usize,
        #[arg(long, value_enum, default_value = "kitti")]
        format: Format,
        /// Format of the ground truth, when it differs from `--format`.
        #[arg(long, value_enum)]
        gt_format: Option<Format>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates and exports a synthetic scene.
    Synth {
        /// Scene description (TOML). `--set` keys apply to this scene.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative improvement of one statistics file over another.
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        ours: PathBuf,
        /// Row to compare; the first row when omitted.
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores outlier decisions against ground-truth labels.
    Confusion {
        /// Directory of outlier files written by `filter`.
        #[arg(long)]
        outliers: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
