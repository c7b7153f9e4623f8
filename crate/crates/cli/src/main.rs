//! `gigadetect`: batch front end for the slide pipeline.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numeric error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gigadetect_core::detection_metrics::{FpDenominator, PointsMode, ResampleUnit};
use gigadetect_core::patch_pipeline::DEFAULT_GRAY_THRESHOLD;
use gigadetect_core::slide_store::Split;
use gigadetect_core::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "gigadetect", version, about = "Tumor detection on tiled slide pyramids")]
struct Cli {
    /// Worker threads (0 = one per CPU). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: pyramids, tumor masks and a manifest.
    Synth(SynthArgs),
    /// Write the tissue/background cell grid of each slide as JSON.
    TissueMask(TissueArgs),
    /// Draw class-balanced training patches and dump them as PNG + JSONL.
    SamplePatches(SampleArgs),
    /// Fit per-slide HSD color statistics and their median reference.
    FitColornorm(FitColorArgs),
    /// Print a color statistics file.
    InspectColornorm(InspectColorArgs),
    /// Normalize one slide towards reference statistics.
    ApplyColornorm(ApplyColorArgs),
    /// Train the color-histogram logistic model with RMSProp.
    TrainToy(TrainArgs),
    /// Compute a probability heatmap for every slide of a split.
    Infer(InferArgs),
    /// Extract detections and score FROC and slide-level AUC with bootstrap intervals.
    Evaluate(EvalArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Slides per split.
    #[arg(long, default_value_t = 20)]
    slides: usize,
    /// Tumor slides per split (default: half of --slides).
    #[arg(long)]
    tumor_slides: Option<usize>,
    /// Tumor slides per split whose annotations are marked non-exhaustive.
    #[arg(long, default_value_t = 0)]
    non_exhaustive: usize,
    /// Tumors painted on each tumor slide.
    #[arg(long, default_value_t = 1)]
    tumors_per_slide: u32,
    /// Slide width and height in base pixels.
    #[arg(long, default_value_t = 1024)]
    size: u32,
    /// Microns per base pixel.
    #[arg(long, default_value_t = 4.0)]
    mpp: f64,
    /// Tile side of the written pyramids.
    #[arg(long, default_value_t = 256)]
    tile_size: u32,
    /// Comma separated splits to generate.
    #[arg(long, value_delimiter = ',', default_value = "test")]
    splits: Vec<SplitArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TissueArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Only this split (default: every slide).
    #[arg(long)]
    split: Option<SplitArg>,
    #[arg(long)]
    out: PathBuf,
    /// Cells whose mean gray level exceeds this are background.
    #[arg(long, default_value_t = DEFAULT_GRAY_THRESHOLD)]
    gray_threshold: f64,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Number of patches to draw.
    #[arg(long, default_value_t = 16)]
    count: u64,
    /// First draw index.
    #[arg(long, default_value_t = 0)]
    start: u64,
    #[arg(long)]
    out: PathBuf,
    /// Comma separated magnifications, e.g. `40x,20x`.
    #[arg(long, default_value = "40x")]
    magnifications: String,
    /// Skip orientation and color augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Maximum center jitter in base pixels per axis.
    #[arg(long, default_value_t = 8)]
    jitter: u32,
    #[arg(long, default_value_t = DEFAULT_GRAY_THRESHOLD)]
    gray_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitColorArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Directory for `<slide_id>.json` stats and `reference.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRAY_THRESHOLD)]
    gray_threshold: f64,
}

#[derive(Args, Debug)]
struct InspectColorArgs {
    /// Stats file written by fit-colornorm.
    stats: PathBuf,
}

#[derive(Args, Debug)]
struct ApplyColorArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    slide_id: String,
    /// Target statistics, e.g. `reference.json` from fit-colornorm.
    #[arg(long)]
    reference: PathBuf,
    /// Cached statistics of this slide; fitted on its tissue when omitted.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Output pyramid directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRAY_THRESHOLD)]
    gray_threshold: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    steps: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value = "40x")]
    magnifications: String,
    /// Halve the learning rate after this many examples.
    #[arg(long, default_value_t = 2_000_000)]
    lr_decay_examples: u64,
    /// Train on soft labels instead of hard labels.
    #[arg(long)]
    soft_labels: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 8)]
    jitter: u32,
    #[arg(long, default_value_t = DEFAULT_GRAY_THRESHOLD)]
    gray_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Output directory for `<slide_id>.heatmap` files.
    #[arg(long)]
    out: PathBuf,
    /// Use the annotation oracle as classifier.
    #[arg(long, conflicts_with_all = ["model", "classifier"])]
    oracle: bool,
    /// Gaussian noise added by the oracle.
    #[arg(long, default_value_t = 0.1, conflicts_with = "no_noise")]
    noise_sigma: f64,
    /// Oracle without noise (same as --noise-sigma 0).
    #[arg(long)]
    no_noise: bool,
    /// Trained model file; repeat to average an ensemble.
    #[arg(long, conflicts_with = "classifier")]
    model: Vec<PathBuf>,
    /// Built-in classifier, currently `constant:<p>`.
    #[arg(long)]
    classifier: Option<String>,
    /// Average predictions over the 8 orientations.
    #[arg(long, overrides_with = "no_tta", default_value_t = true)]
    tta: bool,
    #[arg(long, overrides_with = "tta")]
    no_tta: bool,
    /// Magnifications for the oracle and constant classifiers.
    #[arg(long, default_value = "40x")]
    magnifications: String,
    /// Grid spacing in base pixels; must divide 128.
    #[arg(long, default_value_t = 128)]
    stride: u32,
    /// Normalize each slide towards these statistics before inference.
    #[arg(long)]
    color_reference: Option<PathBuf>,
    /// Directory of cached per-slide statistics used with --color-reference.
    #[arg(long, requires = "color_reference")]
    color_stats: Option<PathBuf>,
    /// Also write `<slide_id>.csv` heatmap exports.
    #[arg(long)]
    csv: bool,
    #[arg(long, default_value_t = DEFAULT_GRAY_THRESHOLD)]
    gray_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PointsModeArg {
    Nms,
    Cc,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FpDenominatorArg {
    Negative,
    All,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ResampleArg {
    Slides,
    Points,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Directory with `<slide_id>.heatmap` files.
    #[arg(long)]
    heatmaps: PathBuf,
    /// Output directory for report.json, froc.svg, roc.svg and points/.
    #[arg(long)]
    out: PathBuf,
    /// NMS suppression radius in heatmap cells.
    #[arg(long, default_value_t = 6.0)]
    nms_radius: f64,
    /// Detection threshold; only cells above it become points.
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long, value_enum, default_value = "nms")]
    points_mode: PointsModeArg,
    /// Slides dividing the false-positive count.
    #[arg(long, value_enum, default_value = "negative")]
    fp_denominator: FpDenominatorArg,
    /// Bootstrap unit for the FROC interval.
    #[arg(long, value_enum, default_value = "slides")]
    froc_resample: ResampleArg,
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl From<PointsModeArg> for PointsMode {
    fn from(m: PointsModeArg) -> Self {
        match m {
            PointsModeArg::Nms => PointsMode::Nms,
            PointsModeArg::Cc => PointsMode::Cc,
        }
    }
}

impl From<FpDenominatorArg> for FpDenominator {
    fn from(m: FpDenominatorArg) -> Self {
        match m {
            FpDenominatorArg::Negative => FpDenominator::Negative,
            FpDenominatorArg::All => FpDenominator::All,
        }
    }
}

impl From<ResampleArg> for ResampleUnit {
    fn from(m: ResampleArg) -> Self {
        match m {
            ResampleArg::Slides => ResampleUnit::Slides,
            ResampleArg::Points => ResampleUnit::Points,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
            eprintln!("error: cannot start {} workers: {e}", cli.workers);
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::TissueMask(a) => commands::tissue_mask(a),
        Command::SamplePatches(a) => commands::sample_patches(a),
        Command::FitColornorm(a) => commands::fit_colornorm(a),
        Command::InspectColornorm(a) => commands::inspect_colornorm(a),
        Command::ApplyColornorm(a) => commands::apply_colornorm(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Infer(a) => commands::infer(a, cli.workers),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
