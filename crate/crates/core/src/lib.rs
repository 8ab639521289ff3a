pub mod harness;
pub mod kernels;
pub mod lmv;
pub mod model;
pub mod slot;

pub use kernels::{Matrix, WeightMatrix};
pub use model::{Checkpoint, ModelBundle, ModelConfig, ModelError, TokenId, Tokenizer};
pub use slot::{AdaptedSample, Delta, SlotConfig, SlotError};
