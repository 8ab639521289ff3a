//! Per-sample test-time optimization of a hidden-feature offset.

mod adapt;
mod config;
mod delta;
mod generate;
mod loss;
mod optim;

pub use adapt::{optimize_delta, optimize_from_hidden, prefill, run_batch, AdaptedRecord, AdaptedSample, Prefill};
pub use config::{LossReduction, SlotConfig, UpdateRule};
pub(crate) use delta::add_delta_row;
pub use delta::{apply_delta, Delta};
pub use generate::{
    generate, generate_baseline, generate_from_prefill, DecodeMode, GenerationConfig, GenerationOutput, StopReason,
};
pub use loss::{delta_gradient, prompt_loss, PromptObjective};
pub use optim::{clip_global_norm, OptimizerState};

use crate::kernels::KernelError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum SlotError {
    #[error("prompt has {len} token(s); at least 2 are needed for a next-token loss")]
    PromptTooShort { len: usize },
    #[error("hidden has {rows} row(s) but the prompt has {tokens} token(s)")]
    RowMismatch { rows: usize, tokens: usize },
    #[error("width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value during optimization at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}
