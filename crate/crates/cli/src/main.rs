mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ssrfcn", version, about = "Face anti-spoofing with a self-supervised regional FCN")]
pub struct Cli {
    /// Flat `key = value` file of flag defaults; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    pub log_format: LogFormat,

    /// Single-threaded, no wall-clock fields in reports or logs.
    #[arg(long, global = true)]
    pub strict_determinism: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic live/spoof dataset with manifest and ground truth.
    Synth(SynthArgs),
    /// Stage I: train on whole images.
    Train(TrainArgs),
    /// Stage II: fine-tune a Stage I model on mined spoof regions.
    Finetune(FinetuneArgs),
    /// Score a manifest with fixed weights, or run a train/test protocol.
    Eval(EvalArgs),
    /// Spoofness score and decision for one image.
    Infer(InferArgs),
    /// Write a score-map heatmap overlay for one image.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub live_videos: usize,
    #[arg(long, default_value_t = 32)]
    pub spoof_videos: usize,
    #[arg(long, default_value_t = 1)]
    pub frames_per_video: usize,
    #[arg(long, default_value_t = 2)]
    pub videos_per_subject: usize,
    #[arg(long, default_value_t = 256)]
    pub side: usize,
    /// global_texture or partial_patch.
    #[arg(long, default_value = "global_texture")]
    pub artifact: String,
    #[arg(long, default_value_t = 64)]
    pub box_min: usize,
    #[arg(long, default_value_t = 128)]
    pub box_max: usize,
    #[arg(long, default_value_t = 24.0)]
    pub amplitude: f32,
    #[arg(long, default_value_t = 4.0)]
    pub noise: f32,
    /// Comma-separated spoof type names.
    #[arg(long, value_delimiter = ',', default_value = "print")]
    pub types: Vec<String>,
    /// Use thirteen named spoof types instead of `--types`.
    #[arg(long)]
    pub thirteen_types: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Options shared by both training stages.
#[derive(Debug, Args, Serialize)]
pub struct CommonTrain {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub flip_probability: f64,
    /// Use every n-th frame of each video.
    #[arg(long, default_value_t = 1)]
    pub frame_stride: usize,
    /// Required side of every training image; 0 accepts any equal size.
    #[arg(long, default_value_t = 256)]
    pub image_size: usize,
    /// JSON-lines training log; defaults to the weight path with `.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonTrain,
    #[arg(long, default_value = "stage1.ssrfcn")]
    pub out: PathBuf,
    /// Widths of the four downsampling layers.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub channels: Vec<usize>,
}

/// Stage II options, shared with protocol runs.
#[derive(Debug, Args, Serialize)]
pub struct RegionArgs {
    /// self_supervised, global, fixed_eye, fixed_nose, fixed_mouth or random.
    #[arg(long, default_value = "self_supervised")]
    pub strategy: String,
    #[arg(long, default_value_t = 64)]
    pub min_region: usize,
    #[arg(long, default_value_t = 256)]
    pub max_region: usize,
    #[arg(long, default_value_t = 1)]
    pub regions_per_spoof_image: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f32,
    /// Probability that a batch uses whole images instead of crops.
    #[arg(long, default_value_t = 0.0)]
    pub mix_in: f64,
    /// Mine spoof masks once with the Stage I weights.
    #[arg(long)]
    pub freeze_masks: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: CommonTrain,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Stage I weights to start from.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value = "stage2.ssrfcn")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score `--manifest` with these weights instead of training.
    #[arg(long, conflicts_with = "protocol")]
    pub weights: Option<PathBuf>,
    /// leave_one_spoof_out, known_split or cross_dataset.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Test manifest for cross_dataset.
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    /// Only hold out this spoof type.
    #[arg(long)]
    pub held_out: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Metrics to tabulate: apcer, bpcer, acer, eer, tdr, hter.
    #[arg(long, value_delimiter = ',')]
    pub metric: Vec<String>,
    #[arg(long, default_value_t = 0.02)]
    pub fdr: f64,
    /// Directory for `report.json` and `report.txt`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Stage II epochs per cell; 0 skips Stage II.
    #[arg(long, default_value_t = 0)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub flip_probability: f64,
    #[arg(long, default_value_t = 1)]
    pub frame_stride: usize,
    #[arg(long, default_value_t = 256)]
    pub image_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub channels: Vec<usize>,
    #[command(flatten)]
    pub region: RegionArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Print a JSON object instead of `score decision`.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(format: LogFormat, strict: bool) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    builder.target(env_logger::Target::Stderr);
    match format {
        LogFormat::Json => {
            builder.format(move |buf, record| {
                let mut line = serde_json::json!({
                    "level": record.level().to_string().to_lowercase(),
                    "target": record.target(),
                    "message": record.args().to_string(),
                });
                if !strict {
                    let now = std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_secs_f64())
                        .unwrap_or(0.0);
                    line["time"] = serde_json::json!(now);
                }
                writeln!(buf, "{line}")
            });
        }
        LogFormat::Text if strict => {
            builder.format_timestamp(None);
        }
        LogFormat::Text => {}
    }
    let _ = builder.try_init();
}

/// Parses arguments, folding in a config file when one is named.
fn parse_cli() -> Cli {
    let args: Vec<String> = std::env::args().collect();
    let mut cmd = Cli::command();
    if let Some(path) = config::config_path(&args) {
        let path = PathBuf::from(path);
        let usage = |msg: String| -> ! {
            Cli::command()
                .error(clap::error::ErrorKind::InvalidValue, msg)
                .exit()
        };
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| usage(format!("cannot read config {}: {e}", path.display())));
        let entries = config::parse(&text, &path).unwrap_or_else(|e| usage(e));
        let sub = config::find_subcommand(&cmd, &args).map(str::to_string);
        cmd = config::apply(cmd, sub.as_deref(), entries).unwrap_or_else(|e| usage(e));
    }
    let matches = cmd.get_matches_from(&args);
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn main() -> ExitCode {
    let cli = parse_cli();
    init_logging(cli.log_format, cli.strict_determinism);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            let _ = Cli::command()
                .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
                .print();
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
