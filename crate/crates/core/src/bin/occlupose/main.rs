//! `occlupose` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "occlupose", version, about = "Synthetic occlusion augmentation and 3D pose geometry tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration (flat keys; unknown keys are errors).
    #[arg(long, global = true, env = "OCCLUPOSE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the occluder library from a Pascal VOC 2012 tree.
    IngestVoc(IngestArgs),
    /// Crop, augment and occlude frames.
    Augment(AugmentArgs),
    /// Compare analytic derivatives with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train free logits and the focal correction on synthetic targets.
    TrainToy(TrainToyArgs),
    /// Score predictions against ground truth.
    Mpjpe(MpjpeArgs),
    /// Toy loss or external MPJPE per occlusion probability.
    SweepPocc(SweepArgs),
    /// Decode a backbone tensor file into joint coordinates.
    Decode(DecodeArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Root containing Annotations/, JPEGImages/, SegmentationObject/.
    #[arg(long)]
    pub voc_root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub min_area_px: u64,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub library: PathBuf,
    /// Directory of frames named `<frame_id>.png|jpg`.
    #[arg(long, required_unless_present = "synthetic")]
    pub images: Option<PathBuf>,
    /// JSON lines `{frame_id, x, y, w, h, score}`.
    #[arg(long, required_unless_present = "synthetic")]
    pub boxes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub p_occ: Option<f64>,
    /// Generate this many synthetic frames instead of reading images.
    #[arg(long, conflicts_with_all = ["images", "boxes"])]
    pub synthetic: Option<usize>,
    /// Write only the provenance log, not the crops.
    #[arg(long)]
    pub log_only: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = occlupose::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Perturb one analytic Jacobian entry (negative control).
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, overrides_with = "no_learn_c")]
    pub learn_c: bool,
    #[arg(long, overrides_with = "learn_c")]
    pub no_learn_c: bool,
    #[arg(long, default_value = "toy_out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MpjpeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions made on horizontally flipped inputs.
    #[arg(long)]
    pub tta_flipped: Option<PathBuf>,
    /// Further prediction files averaged with `--pred`.
    #[arg(long, num_args = 1..)]
    pub ensemble: Vec<PathBuf>,
    /// Per-action CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated probabilities, e.g. `0,0.1,0.5`.
    #[arg(long)]
    pub p_occ_values: String,
    /// One prediction file per value (external mode); requires `--gt`.
    #[arg(long, num_args = 1.., requires = "gt")]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Crop zoom `s`; when given, camera-space joints are written too.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub correction: f64,
    #[arg(long, default_value_t = 0)]
    pub root_index: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::IngestVoc(a) => commands::ingest_voc(a),
        Command::Augment(a) => commands::augment(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Mpjpe(a) => commands::mpjpe(a),
        Command::SweepPocc(a) => commands::sweep_pocc(a),
        Command::Decode(a) => commands::decode(a),
    };
    match result {
        Ok(code) => code,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
