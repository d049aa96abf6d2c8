use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "patchslim",
    version,
    about = "Train toy vision transformers, score and prune their patches, count MACs"
)]
pub struct Cli {
    /// Worker threads. Falls back to PATCHSLIM_THREADS, then to every core.
    /// One thread gives bitwise-reproducible outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON object of flag values (optionally sectioned by command name).
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Log filter for stderr: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate the synthetic token dataset, or convert a CSV image grid.
    GenData(GenDataArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Accuracy and MACs, optionally under a mask schedule or dynamically.
    Eval(EvalArgs),
    /// Mean pairwise cosine similarity of patch features per layer (CSV).
    Similarity(SimilarityArgs),
    /// Per-patch scores for one or all layers (CSV).
    Score(ScoreArgs),
    /// Top-down mask search under an error budget, or the uniform baseline.
    Prune(PruneArgs),
    /// Analytic MAC report for a model or preset, optionally masked (JSON and CSV).
    Flops(FlopsArgs),
    /// Fit per-layer score predictors for dynamic pruning.
    TrainPredictors(TrainPredictorsArgs),
    /// Accuracy with per-input masks chosen by the predictors.
    EvalDynamic(EvalDynamicArgs),
}

impl Command {
    pub const NAMES: [&'static str; 9] = [
        "gen-data",
        "train",
        "eval",
        "similarity",
        "score",
        "prune",
        "flops",
        "train-predictors",
        "eval-dynamic",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Similarity(_) => "similarity",
            Command::Score(_) => "score",
            Command::Prune(_) => "prune",
            Command::Flops(_) => "flops",
            Command::TrainPredictors(_) => "train-predictors",
            Command::EvalDynamic(_) => "eval-dynamic",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Command::GenData(a) => a.seed,
            Command::Train(a) => a.seed,
            Command::Eval(a) => a.seed,
            Command::Similarity(a) => a.seed,
            Command::Score(a) => a.seed,
            Command::Prune(a) => a.seed,
            Command::Flops(a) => a.seed,
            Command::TrainPredictors(a) => a.seed,
            Command::EvalDynamic(a) => a.seed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenDataArgs {
    /// `default` or a JSON file with a dataset spec.
    #[arg(long, default_value = "default")]
    pub spec: String,
    /// Overrides the dataset spec's sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Convert this CSV image grid (rows: label, then H·W pixels) instead of generating.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long, requires = "csv")]
    pub height: Option<usize>,
    #[arg(long, requires = "csv")]
    pub width: Option<usize>,
    /// Square patch side for the CSV grid.
    #[arg(long, requires = "csv")]
    pub patch: Option<usize>,
    #[arg(long, requires = "csv")]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Per-epoch loss and accuracy as JSON.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Sgd)]
    pub optimizer: OptimizerChoice,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long)]
    pub no_layernorm: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct DynamicFlags {
    /// Select patches per input with the predictors in `--predictors`.
    #[arg(long, requires = "predictors")]
    pub dynamic: bool,
    #[arg(long, value_name = "PATH")]
    pub predictors: Option<PathBuf>,
    /// Comma-separated per-layer kept counts; defaults to the kept counts of `--masks`.
    #[arg(long)]
    pub budgets: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub masks: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub dynamic: DynamicFlags,
    #[arg(long)]
    pub seed: u64,
    /// Report path; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimilarityArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Inputs drawn (with `--seed`) from the dataset.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    Significance,
    Random,
    AttnNorm,
}

#[derive(Args, Debug, Serialize)]
pub struct ScoreArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Deeper masks for significance scores. Without it layers after the
    /// scored one keep every patch and the last keeps the class token only.
    #[arg(long, value_name = "PATH")]
    pub masks: Option<PathBuf>,
    /// One layer (1-based); all scorable layers when absent.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, value_enum, default_value_t = ScorerChoice::Significance)]
    pub scorer: ScorerChoice,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PruneArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Tolerated relative reconstruction error per layer.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Patches added per search step.
    #[arg(long, default_value_t = 10)]
    pub granularity: usize,
    #[arg(long, default_value_t = 256)]
    pub calibration: usize,
    #[arg(long, value_enum, default_value_t = ScorerChoice::Significance)]
    pub scorer: ScorerChoice,
    #[arg(long, default_value_t = 3)]
    pub block_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub block_lr: f64,
    #[arg(long, default_value_t = 16)]
    pub block_batch_size: usize,
    /// Use the raw instead of the relative reconstruction error.
    #[arg(long)]
    pub no_normalize: bool,
    /// Uniform baseline: drop this fraction of patches at every layer instead of searching.
    #[arg(long)]
    pub uniform_rate: Option<f64>,
    /// Epochs of whole-model fine-tuning under the final schedule.
    #[arg(long, default_value_t = 0)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub finetune_lr: f64,
    #[arg(long, value_name = "PATH")]
    pub out_masks: PathBuf,
    /// Weights after block (and optional full) fine-tuning.
    #[arg(long, value_name = "PATH")]
    pub out_model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    DeitTi,
    DeitS,
    Toy,
}

#[derive(Args, Debug, Serialize)]
pub struct FlopsArgs {
    /// Take the architecture from a model file.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_name = "PATH")]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Per-layer table.
    #[arg(long, value_name = "PATH")]
    pub csv: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    Log1p,
    MeanNormalized,
    Log1pMeanNormalized,
    Rank,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainPredictorsArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Static schedule whose deeper masks define the regression targets.
    #[arg(long, value_name = "PATH")]
    pub masks: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Inputs drawn from the dataset for the targets.
    #[arg(long, default_value_t = 1024)]
    pub samples: usize,
    /// Pooling group; defaults to max(d/16, 1).
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long, value_enum, default_value_t = TargetChoice::Rank)]
    pub target: TargetChoice,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalDynamicArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub predictors: PathBuf,
    /// Static schedule: source of the budgets and of the rank-correlation targets.
    #[arg(long, value_name = "PATH")]
    pub masks: Option<PathBuf>,
    /// Comma-separated per-layer kept counts; defaults to the kept counts of `--masks`.
    #[arg(long)]
    pub budgets: Option<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}
