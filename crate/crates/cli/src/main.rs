//! `mvss`: generate forged data, train, infer, evaluate and sweep robustness.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvss_core::metrics::ThresholdMode;

/// Exit status for per-item or runtime failures.
const EXIT_FAILURE: u8 = 1;
/// Exit status for unusable configuration or arguments.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mvss", version, about = "Image manipulation detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic forged/authentic dataset with a manifest.
    GenData(GenDataArgs),
    /// Train a model on manifest entries.
    Train(TrainArgs),
    /// Predict probability and binary masks for images.
    Infer(InferArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Pixel F1 under increasing JPEG compression or blur.
    Robustness(RobustnessArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML generation config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image side in pixels (multiple of 16).
    #[arg(long)]
    size: Option<u32>,
    /// Split given as name:forged:authentic, repeatable.
    #[arg(long = "split", value_name = "NAME:FORGED:AUTHENTIC")]
    splits: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the training and model seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value = "train")]
    train_split: String,
    /// Validation split; skipped when absent from the manifest.
    #[arg(long, default_value = "val")]
    val_split: String,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write last.ckpt every this many steps.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "fixed", value_parser = parse_mode)]
    mode: ThresholdMode,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Restrict to entries with this split tag.
    #[arg(long)]
    split: Option<String>,
    /// Restrict to one manipulation kind (authentic entries are kept).
    #[arg(long)]
    kind: Option<String>,
    /// Average pixel metrics per image instead of pooling pixels.
    #[arg(long)]
    per_image: bool,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// e.g. `jpeg:100,90,70,50` or `blur:0,1,2,3`.
    #[arg(long)]
    levels: String,
    #[arg(long)]
    split: Option<String>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

fn parse_mode(s: &str) -> Result<ThresholdMode, String> {
    s.parse().map_err(|e: mvss_core::Error| e.to_string())
}

fn configure_workers() -> Result<(), commands::CliError> {
    let Ok(raw) = std::env::var("MVSS_NUM_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| commands::CliError::Config(format!("MVSS_NUM_WORKERS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_workers().and_then(|()| match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Robustness(a) => commands::robustness(a),
    });
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("mvss: {failures} item(s) failed");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(commands::CliError::Config(msg)) => {
            eprintln!("mvss: configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(commands::CliError::Failed(msg)) => {
            eprintln!("mvss: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
