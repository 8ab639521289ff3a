//! GPT-2-class decoder runtime: checkpoint loading, byte-level BPE, and the
//! forward pass that produces the post-final-norm hidden features `H` which
//! feed the LM head. The head itself is exposed separately ([`lm_logits`])
//! so that a vector can be inserted between the two.

mod checkpoint;
mod config;
mod forward;
pub mod safetensors;
pub mod synthetic;
mod tokenizer;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointParts, LayerWeights, CONFIG_FILE, WEIGHTS_FILE};
pub use config::ModelConfig;
pub use forward::{forward_hidden, lm_logits, KvCache};
pub use tokenizer::{bytes_to_unicode, Tokenizer, TokenizerError, END_OF_TEXT, MERGES_FILE, VOCAB_FILE};

use crate::kernels::KernelError;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("safetensors header parse failure: {0}")]
    Header(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {actual}, expected {expected}")]
    ShapeMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("tensor `{name}` has unsupported dtype {dtype}")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("forward pass needs at least one token")]
    EmptyInput,
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("context overflow: {requested} positions requested, limit is {limit}")]
    ContextOverflow { requested: usize, limit: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A checkpoint together with its tokenizer, as stored in a model directory
/// (`model.safetensors`, `config.json`, `vocab.json`, `merges.txt`).
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub checkpoint: Arc<Checkpoint>,
    pub tokenizer: Arc<Tokenizer>,
}

impl ModelBundle {
    pub fn new(checkpoint: Checkpoint, tokenizer: Tokenizer) -> Self {
        Self {
            checkpoint: Arc::new(checkpoint),
            tokenizer: Arc::new(tokenizer),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, ModelError> {
        let checkpoint = Checkpoint::load(dir)?;
        let tokenizer = Tokenizer::from_dir(dir)?;
        if tokenizer.vocab_size() > checkpoint.vocab_size() {
            return Err(ModelError::Config(format!(
                "tokenizer has {} ids but the model vocabulary is {}",
                tokenizer.vocab_size(),
                checkpoint.vocab_size()
            )));
        }
        Ok(Self::new(checkpoint, tokenizer))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), ModelError> {
        self.checkpoint.save_dir(dir)?;
        self.tokenizer.save_dir(dir)?;
        Ok(())
    }

    /// End-of-sequence id: the config's, else the tokenizer's `<|endoftext|>`.
    pub fn eos_id(&self) -> Option<TokenId> {
        self.checkpoint
            .config()
            .eos_token_id
            .or_else(|| self.tokenizer.eos_id())
    }
}
