mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Preset;

/// Piecewise-constant temporal neural fields: data generation, training,
/// rendering and temporal-stability evaluation.
#[derive(Parser, Debug)]
#[command(name = "chronofield", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML); missing keys take preset values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for `render`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite an existing run.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    /// Worker threads for rendering and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic chronology dataset.
    GenData,
    /// Generate a noisy piecewise-constant 1D signal.
    GenSignal,
    /// Fit the 1D signal with each configured time encoding.
    Fit1d,
    /// Train a field on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Render one image from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Normalized time.
        #[arg(long)]
        time: f64,
        /// image:<i> | file:<json array> | interp:<i>,<j>,<alpha> | mean
        #[arg(long, default_value = "mean")]
        illum: String,
        /// default | image:<i>
        #[arg(long, default_value = "default")]
        view: String,
    },
    /// Render a time sweep and report its temporal stability.
    SweepTime {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "mean")]
        illum: String,
        #[arg(long, default_value = "default")]
        view: String,
        /// Grid points (defaults to `evaluation.sweep_steps`).
        #[arg(long)]
        steps: Option<usize>,
        /// Also write every frame as PPM.
        #[arg(long)]
        frames: bool,
    },
    /// Held-out PSNR/SSIM with per-image embedding fits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Finite-difference check of every op and of the full pipeline.
    GradientCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
