//! `egospeed` command line: synthetic data, training, evaluation and
//! gradient checks.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;

/// Invalid flags, configuration or dataset/model combination (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(name = "egospeed", version, about = "Ego-vehicle speed regression from dashcam video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (frames, lane masks, manifest.csv).
    Synth(SynthArgs),
    /// Train a model and write the best checkpoint and an epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and append a results row.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threads for clip-level work.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub clips: Option<usize>,
    /// Frames per clip.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame rate in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub speed_min: Option<f64>,
    #[arg(long)]
    pub speed_max: Option<f64>,
    /// Moving distractor rectangles per scene.
    #[arg(long)]
    pub distractors: Option<usize>,
    /// Distractor velocity bound in px/s.
    #[arg(long)]
    pub distractor_speed: Option<f64>,
    /// Additive Gaussian noise std.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Frame width and height in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Fraction of clips assigned to the test split.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// manifest.csv, or a directory containing one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// KITTI raw root (`<date>/<date>_drive_<id>_sync/...`); drives are
    /// chosen from the benchmark split table.
    #[arg(long)]
    pub kitti_root: Option<PathBuf>,
    /// kitti or nuimages.
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// threedcma, threedcnn_nomask or vivit.
    #[arg(long)]
    pub model: Option<String>,
    /// faithful or reduced (3D-CNN widths).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub vivit_layers: Option<usize>,
    #[arg(long)]
    pub vivit_heads: Option<usize>,
    #[arg(long)]
    pub vivit_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train, test or all.
    #[arg(long)]
    pub split: Option<String>,
    /// Results CSV to append to (default `<out>/results.csv`).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Dataset name written to the results row.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Also write a label-speed histogram.
    #[arg(long)]
    pub histogram: bool,
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Cross-dataset protocol: resample to `--target-hz` before windowing.
    #[arg(long)]
    pub cross: bool,
    #[arg(long)]
    pub target_hz: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Only run these cases (repeatable).
    #[arg(long = "op")]
    pub ops: Vec<String>,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Fraction of model parameters probed.
    #[arg(long)]
    pub param_fraction: Option<f64>,
    /// Negate analytic gradients (negative control; every case must fail).
    #[arg(long)]
    pub inject_sign_error: bool,
}

/// Exit code for an error: 1 for invalid input, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<egospeed::Error>() {
            use egospeed::Error as E;
            return match e {
                E::InvalidArgument(_) | E::Geometry(_) | E::Infeasible(_) | E::Shape(_) => EXIT_INVALID,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
