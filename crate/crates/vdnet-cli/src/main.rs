//! `vdnet`: one binary exposing the whole detection workflow.
//!
//! Subcommands cover dataset generation, patch-classifier training,
//! saliency inspection, detector training with or without attention
//! masking, evaluation, and the blur-variance sweep. Every run is
//! deterministic given its `--seed` and writes a `config.json` echo of
//! all effective settings next to its outputs.

mod commands;

use clap::{Args, Parser, Subcommand};
use commands::CliError;
use std::path::PathBuf;
use std::process::ExitCode;
use vdnet::ventral::Aggregation;

#[derive(Parser)]
#[command(name = "vdnet", version, about = "Attention-masked object detection workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shapes dataset (scenes, annotations, manifest)
    GenData(GenDataArgs),
    /// Train the patch classifier that drives the attention mask
    TrainVentral(TrainVentralArgs),
    /// Train the anchor-box detector, optionally on attention-masked images
    TrainDorsal(TrainDorsalArgs),
    /// Run the saliency pipeline on one image and write its artifacts
    Saliency(SaliencyArgs),
    /// Evaluate a detector on the test split (optionally against a baseline)
    Eval(EvalArgs),
    /// Sweep the blur variance and report mAP at each setting
    AblateSigma(AblateSigmaArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Dataset directory to create
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Training scenes to generate
    #[arg(long, default_value_t = 200)]
    train: usize,
    /// Test scenes to generate
    #[arg(long, default_value_t = 50)]
    test: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    min_objects: usize,
    #[arg(long, default_value_t = 3)]
    max_objects: usize,
    /// Smallest object bounding size in pixels
    #[arg(long, default_value_t = 14)]
    min_size: usize,
    /// Largest object bounding size in pixels
    #[arg(long, default_value_t = 28)]
    max_size: usize,
    /// Patch side length used later for classifier training
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    /// Worker threads for scene generation
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainVentralArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for checkpoint and reports
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Epoch at which the learning rate decays (repeatable)
    #[arg(long = "decay-epoch", default_values_t = [20])]
    decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    decay_factor: f64,
}

#[derive(Args)]
struct TrainDorsalArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for checkpoint and reports
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Patch-classifier checkpoint; when given, training images are
    /// attention-masked through it first
    #[arg(long, value_name = "CKPT")]
    ventral: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Epoch at which the learning rate decays (repeatable)
    #[arg(long = "decay-epoch", default_values_t = [30])]
    decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    decay_factor: f64,
    /// Weight on the box-regression loss term
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Anchors sampled per image for the classification term
    #[arg(long, default_value_t = 32)]
    anchor_batch: usize,
    #[command(flatten)]
    mask: MaskArgs,
}

/// Attention-mask settings shared by every command that runs the
/// saliency pipeline.
#[derive(Args)]
struct MaskArgs {
    /// Blur variance, quoted at the nominal 224x224 resolution
    #[arg(long, default_value_t = 30.0)]
    variance: f64,
    /// Channel aggregation: mean or max
    #[arg(long, default_value = "mean", value_parser = parse_aggregation)]
    aggregation: Aggregation,
    /// Blur kernel radius override (default: 3 effective sigmas)
    #[arg(long)]
    kernel_radius: Option<usize>,
}

#[derive(Args)]
struct SaliencyArgs {
    /// Input image (PPM or PGM)
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Patch-classifier checkpoint
    #[arg(long, value_name = "CKPT")]
    ventral: PathBuf,
    /// Output directory for the artifact images
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    mask: MaskArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Detector checkpoint to evaluate
    #[arg(long, value_name = "CKPT")]
    detector: PathBuf,
    /// Patch-classifier checkpoint; when given, test images are
    /// attention-masked before detection
    #[arg(long, value_name = "CKPT")]
    ventral: Option<PathBuf>,
    /// Second detector evaluated without masking; adds a side-by-side
    /// comparison report
    #[arg(long, value_name = "CKPT")]
    baseline: Option<PathBuf>,
    /// Output directory for reports and detections
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Discard detections scoring below this
    #[arg(long, default_value_t = 0.05)]
    score_thresh: f64,
    /// Same-class overlap above which the lower-scored box is suppressed
    #[arg(long, default_value_t = 0.5)]
    nms_thresh: f64,
    /// Overlap required to count a detection as a true positive
    #[arg(long, default_value_t = 0.5)]
    iou_thresh: f64,
    /// Worker threads for per-image evaluation
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    mask: MaskArgs,
}

#[derive(Args)]
struct AblateSigmaArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Patch-classifier checkpoint that produces the masks
    #[arg(long, value_name = "CKPT")]
    ventral: PathBuf,
    /// Detector checkpoint to evaluate at each variance
    #[arg(long, value_name = "CKPT")]
    detector: PathBuf,
    /// Output directory for the sweep report
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Blur variances to sweep (nominal 224x224 scale)
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 30.0, 120.0])]
    variances: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    score_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    nms_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    iou_thresh: f64,
    /// Worker threads for per-image evaluation
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Channel aggregation: mean or max
    #[arg(long, default_value = "mean", value_parser = parse_aggregation)]
    aggregation: Aggregation,
    /// Blur kernel radius override (default: 3 effective sigmas)
    #[arg(long)]
    kernel_radius: Option<usize>,
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    match s {
        "mean" => Ok(Aggregation::Mean),
        "max" => Ok(Aggregation::Max),
        other => Err(format!("unknown aggregation '{other}' (expected mean or max)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse(); // clap itself exits 2 on malformed flags
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::TrainVentral(args) => commands::train_ventral(args),
        Command::TrainDorsal(args) => commands::train_dorsal(args),
        Command::Saliency(args) => commands::saliency(args),
        Command::Eval(args) => commands::eval(args),
        Command::AblateSigma(args) => commands::ablate_sigma(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(error)) => {
            eprintln!("error: {error}");
            ExitCode::from(1)
        }
    }
}
