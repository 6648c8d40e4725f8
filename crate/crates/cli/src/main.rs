//! `mvgt`: synthetic recordings, DE features, training, evaluation,
//! attention export and ablation sweeps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or I/O
//! error, 4 numeric failure.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvgt::MvgtError;

/// Misuse of flags or configuration that the parser cannot catch.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

#[derive(Parser)]
#[command(name = "mvgt", version, about = "Graph transformer for EEG emotion classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic recordings (.eegr + manifest).
    Synth(SynthArgs),
    /// Compute differential-entropy features for every recording in a directory.
    Extract(ExtractArgs),
    /// Train a model and write a checkpoint plus report CSVs.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature directory.
    Eval(EvalArgs),
    /// Export the top-k attention pairs of the final recycling pass.
    Attention(AttentionArgs),
    /// Train all nine component combinations over several seeds.
    Ablation(AblationArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Trials per class.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long)]
    pub channels_layout: Option<PathBuf>,
    /// Bundled scheme name or JSON file; picks the regions raised per class.
    #[arg(long, default_value = "lobe")]
    pub scheme: String,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Amplitude shift of the class region; 0 gives a corpus without signal.
    #[arg(long, default_value_t = 6.0)]
    pub shift_db: f64,
    #[arg(long, default_value_t = 0.5)]
    pub jitter_db: f64,
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 200.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub window_seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NormArg {
    Standard,
    MinMax,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "lobe")]
    pub scheme: String,
    #[arg(long)]
    pub channels_layout: Option<PathBuf>,
    /// Feature windows per segment.
    #[arg(long = "T", default_value_t = 5)]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 3)]
    pub recycles: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Gaussian basis functions.
    #[arg(long, default_value_t = 32)]
    pub basis: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = NormArg::Standard)]
    pub graph_norm: NormArg,
    #[arg(long)]
    pub detach_recycles: bool,
    #[arg(long)]
    pub no_centrality: bool,
    #[arg(long)]
    pub no_bre: bool,
    #[arg(long)]
    pub no_gse: bool,
    /// Time-step tokens instead of channel tokens.
    #[arg(long)]
    pub pointwise: bool,
}

#[derive(Args, Clone)]
pub struct FitArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    /// Fraction of each class's trials used for training.
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; report CSVs are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Args)]
pub struct SplitArgs {
    /// Must match the stride used in training.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Must match the fraction used in training.
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Metrics CSV; the confusion matrix goes to `<stem>.confusion.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Maps an error chain onto the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<MvgtError>() {
            return match e {
                _ if e.is_numeric() => 4,
                MvgtError::Config(_) => 2,
                MvgtError::Spatial(s) => spatial_code(s),
                MvgtError::Signal(s) => signal_code(s),
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<eegsig::EegError>() {
            return signal_code(e);
        }
        if let Some(e) = cause.downcast_ref::<spatial::SpatialError>() {
            return spatial_code(e);
        }
        if let Some(numkit::NumError::NonFinite { .. }) = cause.downcast_ref::<numkit::NumError>() {
            return 4;
        }
    }
    3
}

fn spatial_code(e: &spatial::SpatialError) -> u8 {
    match e {
        spatial::SpatialError::Numeric(numkit::NumError::NonFinite { .. }) => 4,
        spatial::SpatialError::Numeric(_) => 3,
        _ => 2,
    }
}

fn signal_code(e: &eegsig::EegError) -> u8 {
    match e {
        eegsig::EegError::Parameter(_) => 2,
        eegsig::EegError::Spatial(s) => spatial_code(s),
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Attention(a) => commands::attention(&a),
        Command::Ablation(a) => commands::ablation(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
