use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::next_token_logits;
use super::{prefill, AdaptedSample, Delta, Prefill, SlotError};
use crate::kernels;
use crate::model::{forward_hidden, Checkpoint, KvCache, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecodeMode {
    Greedy,
    Temperature { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub mode: DecodeMode,
    /// Stop (without emitting it) when the end-of-sequence token is chosen.
    pub stop_at_eos: bool,
    /// Keep the logits of every decoding step in the output.
    #[serde(default)]
    pub record_logits: bool,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            mode: DecodeMode::Greedy,
            stop_at_eos: true,
            record_logits: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxTokens,
    /// The model's position limit was reached first.
    ContextLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    pub tokens: Vec<TokenId>,
    pub stop: StopReason,
    /// Per-step vocabulary logits when requested.
    pub step_logits: Vec<Vec<f64>>,
}

impl GenerationOutput {
    pub fn truncated(&self) -> bool {
        self.stop == StopReason::ContextLimit
    }
}

/// Decodes from an adapted sample with its delta frozen and added to every
/// new hidden row.
pub fn generate(
    ckpt: &Checkpoint,
    sample: AdaptedSample,
    config: &GenerationConfig,
    eos: Option<TokenId>,
) -> Result<GenerationOutput, SlotError> {
    let last = sample.hidden.row(sample.hidden.rows() - 1).to_vec();
    decode(ckpt, sample.cache, last, Some(&sample.delta), config, eos)
}

/// Plain decoding without any delta or loss computation.
pub fn generate_baseline(
    ckpt: &Checkpoint,
    prompt: &[TokenId],
    config: &GenerationConfig,
    eos: Option<TokenId>,
) -> Result<GenerationOutput, SlotError> {
    generate_from_prefill(ckpt, prefill(ckpt, prompt)?, None, config, eos)
}

/// Decodes after an existing prefill, optionally adding `delta`.
pub fn generate_from_prefill(
    ckpt: &Checkpoint,
    prefill: Prefill,
    delta: Option<&Delta>,
    config: &GenerationConfig,
    eos: Option<TokenId>,
) -> Result<GenerationOutput, SlotError> {
    let Prefill { hidden, cache } = prefill;
    let last = hidden.row(hidden.rows() - 1).to_vec();
    decode(ckpt, cache, last, delta, config, eos)
}

fn decode(
    ckpt: &Checkpoint,
    mut cache: KvCache,
    mut last_hidden: Vec<f64>,
    delta: Option<&Delta>,
    config: &GenerationConfig,
    eos: Option<TokenId>,
) -> Result<GenerationOutput, SlotError> {
    let mut rng = match config.mode {
        DecodeMode::Greedy => None,
        DecodeMode::Temperature { temperature, seed } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(SlotError::InvalidConfig(format!(
                    "temperature must be positive, got {temperature}"
                )));
            }
            Some((ChaCha8Rng::seed_from_u64(seed), temperature))
        }
    };
    let limit = ckpt.config().max_positions;
    let mut tokens = Vec::new();
    let mut step_logits = Vec::new();
    let stop = loop {
        if tokens.len() == config.max_new_tokens {
            break StopReason::MaxTokens;
        }
        let logits = next_token_logits(ckpt, last_hidden, delta)?;
        let next = match rng.as_mut() {
            None => kernels::argmax_row(&logits) as TokenId,
            Some((rng, t)) => sample(&logits, *t, rng),
        };
        if config.record_logits {
            step_logits.push(logits);
        }
        if config.stop_at_eos && Some(next) == eos {
            break StopReason::Eos;
        }
        tokens.push(next);
        if tokens.len() == config.max_new_tokens {
            break StopReason::MaxTokens;
        }
        if cache.len() >= limit {
            break StopReason::ContextLimit;
        }
        let h = forward_hidden(ckpt, &[next], Some(&mut cache))?;
        last_hidden = h.into_vec();
    };
    Ok(GenerationOutput {
        tokens,
        stop,
        step_logits,
    })
}

fn sample(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> TokenId {
    let mut probs: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    kernels::softmax_in_place(&mut probs);
    match WeightedIndex::new(&probs) {
        Ok(dist) => dist.sample(rng) as TokenId,
        Err(_) => kernels::argmax_row(logits) as TokenId,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic::tiny_bundle;
    use crate::slot::{optimize_delta, SlotConfig};

    #[test]
    fn zero_steps_match_baseline() {
        let bundle = tiny_bundle(16, 2, 2, 11);
        let ckpt = &bundle.checkpoint;
        let p = bundle.tokenizer.encode("A farmer has 12 cows");
        let cfg = GenerationConfig {
            record_logits: true,
            ..GenerationConfig::greedy(12)
        };
        let base = generate_baseline(ckpt, &p, &cfg, bundle.eos_id()).unwrap();
        let s = optimize_delta(ckpt, &p, &SlotConfig::with_steps(0)).unwrap();
        let adapted = generate(ckpt, s, &cfg, bundle.eos_id()).unwrap();
        assert_eq!(base, adapted);
    }

    #[test]
    fn max_tokens_and_context_limit() {
        let bundle = tiny_bundle(8, 1, 2, 2);
        let ckpt = &bundle.checkpoint;
        let mut cfg = GenerationConfig::greedy(5);
        cfg.stop_at_eos = false;
        let out = generate_baseline(ckpt, &[1, 2], &cfg, None).unwrap();
        assert_eq!((out.tokens.len(), out.stop), (5, StopReason::MaxTokens));

        let limit = ckpt.config().max_positions;
        let prompt: Vec<TokenId> = (0..limit as TokenId - 2).map(|i| i % 50).collect();
        cfg.max_new_tokens = 10;
        let out = generate_baseline(ckpt, &prompt, &cfg, None).unwrap();
        assert!(out.truncated());
        assert_eq!(out.tokens.len(), 3);
        let zero = GenerationConfig::greedy(0);
        assert!(generate_baseline(ckpt, &[1], &zero, None).unwrap().tokens.is_empty());
    }

    #[test]
    fn eos_stops_generation() {
        let bundle = tiny_bundle(8, 1, 2, 2);
        let ckpt = &bundle.checkpoint;
        let mut cfg = GenerationConfig::greedy(4);
        cfg.stop_at_eos = false;
        let free = generate_baseline(ckpt, &[3, 4], &cfg, None).unwrap();
        // Treat the second generated token as the end-of-sequence marker.
        cfg.stop_at_eos = true;
        let eos = free.tokens[1];
        let first_eos = free.tokens.iter().position(|&t| t == eos).unwrap();
        let stopped = generate_baseline(ckpt, &[3, 4], &cfg, Some(eos)).unwrap();
        assert_eq!(stopped.stop, StopReason::Eos);
        assert_eq!(stopped.tokens, free.tokens[..first_eos]);
    }

    #[test]
    fn temperature_sampling_is_seeded() {
        let bundle = tiny_bundle(8, 1, 2, 2);
        let ckpt = &bundle.checkpoint;
        let cfg = |seed| GenerationConfig {
            max_new_tokens: 16,
            mode: DecodeMode::Temperature { temperature: 2.0, seed },
            stop_at_eos: false,
            record_logits: false,
        };
        let a = generate_baseline(ckpt, &[1, 2], &cfg(7), None).unwrap();
        let b = generate_baseline(ckpt, &[1, 2], &cfg(7), None).unwrap();
        let c = generate_baseline(ckpt, &[1, 2], &cfg(8), None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tokens, c.tokens);
        let bad = GenerationConfig {
            mode: DecodeMode::Temperature {
                temperature: 0.0,
                seed: 1,
            },
            ..cfg(1)
        };
        assert!(generate_baseline(ckpt, &[1, 2], &bad, None).is_err());
    }
}
