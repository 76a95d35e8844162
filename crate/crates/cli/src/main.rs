//! `deduce`: synth / train / predict / eval / cam / map.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use deduce_core::ModelKind;

use settings::ThresholdPreset;

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(name = "deduce", version, about = "Place categorization from scene features and object detections")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration shared by all subcommands.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed (synth, train). Recorded in every output header.
    #[arg(long, global = true, env = "DEDUCE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for prediction and evaluation.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic manifest.
    Synth(SynthArgs),
    /// Train a linear head and write it to the heads directory.
    Train(TrainArgs),
    /// Predict every frame of a manifest.
    Predict(PredictArgs),
    /// Score one or more models against manifest truth labels.
    Eval(EvalArgs),
    /// Class activation heatmap for one frame.
    Cam(CamArgs),
    /// Semantic map from posed frames.
    Map(MapArgs),
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', ',']).collect();
    let dims: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{s}` is not CxHxW")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(format!("`{s}` is not CxHxW with positive sizes")),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in preset (home7, office5) or a preset file.
    #[arg(long, default_value = "home7")]
    pub preset: String,
    /// Frames per class.
    #[arg(long, required_unless_present = "walk")]
    pub n: Option<usize>,
    /// Walk through these rooms in order instead; frames carry poses.
    #[arg(long, value_delimiter = ',', conflicts_with = "n")]
    pub walk: Option<Vec<String>>,
    #[arg(long, default_value_t = 20, requires = "walk")]
    pub poses_per_room: usize,
    /// Room length in meters along the walk.
    #[arg(long, default_value_t = 4.0, requires = "walk")]
    pub room_length: f64,
    /// Attach rank-1 feature blobs of this shape, e.g. 64x14x14.
    #[arg(long, value_parser = parse_shape, value_name = "CxHxW")]
    pub blob_shape: Option<[usize; 3]>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the resolved preset in its text form.
    #[arg(long, value_name = "FILE")]
    pub save_preset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// scene, combined or attention.
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Held-out manifest for per-epoch validation accuracy.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_drop_every: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Detection confidence cutoff for the combined model's object input.
    #[arg(long)]
    pub min_conf: Option<f64>,
    /// Per-epoch CSV report.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Assets {
    /// Directory holding scene.head, combined.head, attention.head, codebook.json.
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Codebook config; defaults to the heads directory's, then the built-in one.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// N-best threshold; overrides --threshold-preset.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub threshold_preset: Option<ThresholdPreset>,
    #[arg(long)]
    pub min_conf: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub assets: Assets,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupKey {
    /// The part of frame_id before the first `/`.
    Prefix,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or more models, comma separated; one table column each.
    #[arg(long, value_parser = parse_model, value_delimiter = ',', required = true)]
    pub model: Vec<ModelKind>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub assets: Assets,
    #[arg(long, value_enum)]
    pub group_by: Option<GroupKey>,
    /// CSV results file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CamArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Frame to explain; the first frame when absent.
    #[arg(long)]
    pub frame: Option<String>,
    /// Scene to explain; the predicted scene when absent.
    #[arg(long)]
    pub target: Option<String>,
    /// Grayscale heatmap PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Image of the frame; the heatmap is computed at its size.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// False-color overlay PNG.
    #[arg(long, requires = "image")]
    pub overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_model, default_value = "nbest")]
    pub model: ModelKind,
    #[command(flatten)]
    pub assets: Assets,
    /// Meters per cell.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Radius in meters stamped around each pose.
    #[arg(long)]
    pub stamp_radius: Option<f64>,
    /// Odd smoothing window over the time-ordered labels.
    #[arg(long)]
    pub window: Option<usize>,
    /// Pixels per cell side.
    #[arg(long, default_value_t = 4)]
    pub cell_px: usize,
    #[arg(long)]
    pub no_legend: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a PPM copy.
    #[arg(long)]
    pub ppm: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
