//! Fixtures shared by the benchmarks.

use slot_core::model::synthetic::{random_checkpoint, RandomInit};
use slot_core::model::{Checkpoint, ModelConfig, TokenId};

/// A mid-sized model: big enough for the head product to dominate the
/// optimization step the way it does at GPT-2 scale, small enough for
/// criterion's sample counts.
pub fn medium_checkpoint() -> Checkpoint {
    let config = ModelConfig {
        max_positions: 256,
        ..ModelConfig::tiny(8192, 256, 4, 4)
    };
    random_checkpoint(config, &RandomInit::gpt2(0))
}

pub fn prompt(len: usize, vocab: usize) -> Vec<TokenId> {
    (0..len).map(|i| ((i * 7919 + 13) % vocab) as TokenId).collect()
}
