//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tinydet", version, about = "Tiny-object detection, evaluation and sperm tracking")]
pub struct Cli {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long, global = true, env = "TINYDET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root directory for run folders and manifests.
    #[arg(long, global = true, env = "TINYDET_RUNS")]
    pub runs_dir: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic microscopy scenes with VOC annotations and tracks.
    Synth(SynthArgs),
    /// Split media into frames and drop blurred ones.
    Preprocess(PreprocessArgs),
    /// Cluster annotated box sizes into anchor priors.
    Anchors(AnchorsArgs),
    /// Partition sources into train/val/test.
    Split(SplitArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Run a detector over images or videos (JSON lines).
    Detect(DetectArgs),
    /// Score detections against VOC ground truth.
    Eval(EvalArgs),
    /// Link detections into trajectories and measure motility.
    Track(TrackArgs),
    /// K-fold cross-validation over sources.
    Crossval(CrossvalArgs),
    /// Serve detection and tracking over HTTP.
    Serve(ServeArgs),
    /// Inspect recorded runs.
    Runs {
        #[command(subcommand)]
        command: RunsCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum RunsCommand {
    /// One line per completed run.
    List,
    /// Print a run manifest.
    Show { run_id: String },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus root; each scene becomes `<out>/<source_id>/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// Seed of the first scene; scene i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON scene configuration used as the base (flags below override it).
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub n_sperm: Option<usize>,
    #[arg(long)]
    pub n_impurity: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Frames to defocus (comma separated indices).
    #[arg(long, value_delimiter = ',')]
    pub blur_frames: Vec<usize>,
    /// Amplitude of interference fringes added to every frame.
    #[arg(long)]
    pub fringe_amplitude: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Videos, images or image directories.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Where kept frames go; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frames whose Otsu level is below this are removed.
    #[arg(long, default_value_t = tinydet_core::ingest::DEFAULT_BLUR_CUTOFF)]
    pub blur_cutoff: u8,
    /// Overrides the container frame rate.
    #[arg(long)]
    pub fps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    /// Annotated corpus (VOC xml next to each frame image).
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to the training sources of this split file.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Network input size the anchors are expressed in.
    #[arg(long, default_value_t = 416)]
    pub size: usize,
    #[arg(long, default_value_t = tinydet_core::ingest::DEFAULT_ANCHOR_COUNT)]
    pub k: usize,
    #[arg(long, default_value_t = tinydet_core::ingest::anchors::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Train:val:test weights.
    #[arg(long, default_value = "6:2:2")]
    pub ratio: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingFlags {
    /// Network input size (multiple of 8).
    #[arg(long, default_value_t = 416)]
    pub size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs1: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs2: usize,
    #[arg(long, default_value_t = 16)]
    pub batch1: usize,
    #[arg(long, default_value_t = 4)]
    pub batch2: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr1: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr2: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Disable random flips.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames timed for the 416 px throughput figure.
    #[arg(long, default_value_t = 5)]
    pub fps_frames: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split file; without one the sources are split 6:2:2 by seed.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Anchors file; without one they are clustered from the training boxes.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct ModelFlag {
    /// Checkpoint to load.
    #[arg(long, env = "TINYDET_MODEL")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelFlag,
    /// Images, image directories or videos.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Detections file; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MatchFlags {
    #[arg(long)]
    pub b1: Option<f64>,
    #[arg(long)]
    pub b2: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// Confidence threshold for precision, recall and F1.
    #[arg(long)]
    pub conf: Option<f64>,
    /// Score AP with the cumulative-recall reading of the formula.
    #[arg(long)]
    pub ap_literal: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections JSON lines.
    #[arg(long)]
    pub detections: PathBuf,
    /// Annotated corpus.
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub matching: MatchFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrClass {
    Sperm,
    Impurity,
    All,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Detections JSON lines.
    #[arg(long, conflicts_with = "media")]
    pub detections: Option<PathBuf>,
    /// Video or frame directory to detect on first.
    #[arg(long, required_unless_present = "detections")]
    pub media: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlag,
    #[arg(long)]
    pub conf: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub gate_px: Option<f64>,
    #[arg(long)]
    pub max_gap: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub um_per_px: Option<f64>,
    #[arg(long)]
    pub smooth_window: Option<usize>,
    #[arg(long)]
    pub vap_min: Option<f64>,
    #[arg(long, value_enum, default_value = "sperm")]
    pub pr_class: PrClass,
    /// Ground-truth tracks JSON to compare against.
    #[arg(long)]
    pub gt_tracks: Option<PathBuf>,
    /// Source the ground truth belongs to (default: its directory name).
    #[arg(long)]
    pub gt_source: Option<String>,
    /// Largest center distance at which a sample covers a ground-truth point.
    #[arg(long, default_value_t = 5.0)]
    pub match_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stdev {
    Population,
    Sample,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    /// Annotated corpus to split into folds by source.
    #[arg(long, required_unless_present = "reports")]
    pub data: Option<PathBuf>,
    /// Aggregate existing fold reports instead of training.
    #[arg(long, num_args = 1.., conflicts_with = "data")]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "population")]
    pub stdev: Stdev,
    /// Detection floor when collecting ranked detections for AP.
    #[arg(long, default_value_t = 0.01)]
    pub det_conf: f64,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[command(flatten)]
    pub matching: MatchFlags,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelFlag,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}
