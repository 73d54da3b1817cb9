//! `wat` command-line interface.
//!
//! Exit codes: 0 success (flagged runs included), 1 runtime failure,
//! 2 usage or configuration error.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::features::{FeatureType, TurnSource};
use crate::models::ModelKind;

pub const SEED_ENV: &str = "WAT_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "wat",
    version,
    about = "Working-alliance scoring and session classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic transcript corpus.
    GenCorpus(GenCorpusArgs),
    /// Write per-turn alliance scores as CSV.
    Score(ScoreArgs),
    /// Train one classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Run the ablation grid.
    Ablate(AblateArgs),
    /// Serve the remote embedding protocol from the hash provider.
    ServeEmbed(ServeArgs),
    /// Write a vector file for every text in a corpus and inventory.
    ExportVectors(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, conflicts_with = "class_counts", value_parser = clap::value_parser!(u64).range(1..))]
    pub sessions_per_class: Option<u64>,
    /// Four comma-separated counts in condition order.
    #[arg(long, value_delimiter = ',')]
    pub class_counts: Option<Vec<usize>>,
    #[arg(long, default_value_t = 60)]
    pub turns: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub marker_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub therapist_marker_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    #[arg(long, default_value = "hash", value_parser = ["hash", "file", "remote"])]
    pub provider: String,
    #[command(flatten)]
    pub source: ProviderSource,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderSource {
    /// Hash embedding dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    /// Vector file for the file provider.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Base URL for the remote provider.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 4096)]
    pub cache: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to the bundled placeholder inventory.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long, default_value = "transformer")]
    pub model: ModelKind,
    #[arg(long, default_value = "wa_embedding")]
    pub features: FeatureType,
    #[arg(long, default_value = "patient")]
    pub turns: TurnSource,
    #[arg(long, default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to `--seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 50)]
    pub max_pairs: usize,
    /// Defaults to min(500, iters).
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub validation_draws: usize,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub plateau_window: Option<usize>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to the split seed stored in the checkpoint.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Confusion matrix CSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "hash")]
    pub providers: Vec<String>,
    #[command(flatten)]
    pub source: ProviderSource,
    #[arg(long, value_delimiter = ',')]
    pub classifiers: Option<Vec<ModelKind>>,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<FeatureType>>,
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<TurnSource>>,
    #[arg(long, default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 50)]
    pub max_pairs: usize,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub validation_draws: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match commands::dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
