use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slot_core::harness::Arms;
use slot_core::slot::{DecodeMode, GenerationConfig, LossReduction};
use slot_core::SlotConfig;

#[derive(Debug, Parser)]
#[command(
    name = "slot",
    version,
    about = "Per-sample test-time delta optimization for GPT-2 style models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a delta for one prompt, generate with it and rank the logit shift.
    Adapt(AdaptArgs),
    /// Accuracy and throughput of the baseline and adapted model over a dataset.
    Bench(BenchArgs),
    /// Benchmark every (steps, learning rate, seed) cell of a grid.
    Sweep(SweepArgs),
    /// Wall-clock cost of several step counts on the same prompts.
    Overhead(OverheadArgs),
    /// Per-sample and mean logit shifts over a dataset.
    Lmv(LmvArgs),
    /// Write a randomly initialized model directory.
    InitSynthetic(InitArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Directory with model.safetensors, config.json, vocab.json and merges.txt.
    #[arg(long, env = "SLOT_MODEL_DIR")]
    pub model_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Args)]
pub struct SlotArgs {
    /// Optimization steps per sample; 0 disables adaptation.
    #[arg(short = 'T', long, default_value_t = 3)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-8, allow_negative_numbers = true)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true)]
    pub adam_eps: f64,
    /// Bound on the gradient's global L2 norm.
    #[arg(long, allow_negative_numbers = true)]
    pub clip_norm: Option<f64>,
    #[arg(long, value_enum, default_value_t = Reduction::Mean)]
    pub reduction: Reduction,
}

impl SlotArgs {
    pub fn config(&self) -> SlotConfig {
        SlotConfig {
            steps: self.steps,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            adam_eps: self.adam_eps,
            clip_norm: self.clip_norm,
            reduction: match self.reduction {
                Reduction::Mean => LossReduction::Mean,
                Reduction::Sum => LossReduction::Sum,
            },
            ..SlotConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Defaults to 128, or 32 for `overhead`.
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Argmax decoding (the default).
    #[arg(long, conflicts_with = "temperature")]
    pub greedy: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub temperature: Option<f64>,
    /// Sampling seed; record `i` of a dataset uses `seed + i`.
    #[arg(long, default_value_t = 0, requires = "temperature")]
    pub seed: u64,
    /// Keep generating after the end-of-text token.
    #[arg(long)]
    pub ignore_eos: bool,
}

impl GenArgs {
    pub fn config(&self, default_tokens: usize) -> GenerationConfig {
        let mut cfg = GenerationConfig::greedy(self.max_new_tokens.unwrap_or(default_tokens));
        if let Some(temperature) = self.temperature {
            cfg.mode = DecodeMode::Temperature {
                temperature,
                seed: self.seed,
            };
        }
        cfg.stop_at_eos = !self.ignore_eos;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Prompt text.
    #[arg(long, conflicts_with = "prompt_file", required_unless_present = "prompt_file")]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[command(flatten)]
    pub slot: SlotArgs,
    #[command(flatten)]
    pub generation: GenArgs,
    /// Tokens listed in each direction of the logit-shift ranking.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArmChoice {
    Both,
    Slot,
    Baseline,
}

impl From<ArmChoice> for Arms {
    fn from(a: ArmChoice) -> Self {
        match a {
            ArmChoice::Both => Arms::Both,
            ArmChoice::Slot => Arms::SlotOnly,
            ArmChoice::Baseline => Arms::BaselineOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSON-Lines file of {id, prompt, reference, extraction} records.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Use only the first N records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub slot: SlotArgs,
    #[command(flatten)]
    pub generation: GenArgs,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = ArmChoice::Both)]
    pub arms: ArmChoice,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub slot: SlotArgs,
    #[command(flatten)]
    pub generation: GenArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub steps_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub lr_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OverheadArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub slot: SlotArgs,
    #[command(flatten)]
    pub generation: GenArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5")]
    pub steps_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Skip the untimed warm-up pass.
    #[arg(long)]
    pub no_warmup: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct LmvArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// `--steps` sets how many iterations each delta gets before its shift is read.
    #[command(flatten)]
    pub slot: SlotArgs,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Include the full vocabulary-sized vectors in JSON output.
    #[arg(long)]
    pub full_vectors: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// GPT-2-small shape with the GPT-2 tokenizer.
    Gpt2Small,
    /// Two layers, d = 16, small byte-level tokenizer.
    Tiny,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Tiny)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
