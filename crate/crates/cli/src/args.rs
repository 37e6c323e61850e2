use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bcct", version, about = "Background-supervised class activation maps: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic shapes dataset.
    GenData(GenDataArgs),
    /// Pretrain the shared backbone on the shape classes.
    Pretrain(PretrainArgs),
    /// Train the background-vs-target classifier head on a frozen backbone.
    TrainBc(TrainBcArgs),
    /// Joint training of the classifier with BC-mask supervision of its CAM.
    Train(TrainArgs),
    /// Localization error, top-5 error and the BC mask-validity error.
    Eval(EvalArgs),
    /// Localization error at several CAM thresholds.
    Sweep(SweepArgs),
    /// Write box overlays, gradient maps and masks as PPM/PGM images.
    Render(RenderArgs),
    /// Run the gradient-check and mask/box oracle suite.
    Selftest(SelftestArgs),
}

/// Flags shared by every pipeline stage.
#[derive(Debug, Args)]
pub struct Common {
    /// Master seed [default: the config's seed, 0 when absent].
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with training-config fields; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. --set lambda_mask=0 or --set augment.flip=false (repeatable).
    #[arg(long = "set", value_name = "KEY=JSON")]
    pub overrides: Vec<String>,
    /// Worker threads; only 1 is supported [default: the config's value, 1].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Floating-point precision, f32 or f64 [default: the config's value, f32].
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of shape classes (2 to 16).
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Training images.
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    /// Test images.
    #[arg(long, default_value_t = 400)]
    pub test: usize,
    /// Background-only images.
    #[arg(long, default_value_t = 60)]
    pub background: usize,
    /// Image size as HxW; both multiples of 4.
    #[arg(long, default_value = "64x64")]
    pub size: String,
    /// Output directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainBcArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained backbone checkpoint.
    #[arg(long)]
    pub backbone: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained backbone checkpoint [default: pretrain one in this run].
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    /// BC checkpoint supplying the masks [default: train one in this run].
    #[arg(long)]
    pub bc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
    /// CT checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// BC checkpoint; enables the BC mask-validity error.
    #[arg(long)]
    pub bc: Option<PathBuf>,
    /// CAM threshold [default: the config's tau, else its delta].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Split to evaluate.
    /// Split to use: train, test or background.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
    /// CT checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated CAM thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.75,0.8,0.85,0.9")]
    pub deltas: Vec<f64>,
    /// Split to use: train, test or background.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; a numeric suffix is added when it already holds files.
    #[arg(long)]
    pub out: PathBuf,
    /// CT checkpoint whose CAMs give the predicted boxes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// BC checkpoint; adds gradient-map and mask images.
    #[arg(long)]
    pub bc: Option<PathBuf>,
    /// Number of images, taken from the start of the split.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Split to use: train, test or background.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// CAM threshold [default: the config's tau, else its delta].
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Seed of the random test instances.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
