use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Delta, OptimizerState, PromptObjective, SlotConfig, SlotError};
use crate::kernels::Matrix;
use crate::model::{forward_hidden, Checkpoint, KvCache, TokenId};

/// Final hidden features of a prompt together with the attention cache that
/// produced them.
#[derive(Debug, Clone)]
pub struct Prefill {
    pub hidden: Matrix,
    pub cache: KvCache,
}

/// Runs the model once over the whole prompt.
pub fn prefill(ckpt: &Checkpoint, prompt: &[TokenId]) -> Result<Prefill, SlotError> {
    let mut cache = KvCache::new(ckpt.config());
    let hidden = forward_hidden(ckpt, prompt, Some(&mut cache))?;
    Ok(Prefill { hidden, cache })
}

/// A prompt after delta optimization, ready for generation.
#[derive(Debug, Clone)]
pub struct AdaptedSample {
    pub prompt: Vec<TokenId>,
    pub delta: Delta,
    /// `L(δ_0), …, L(δ_T)`; empty when `T = 0` or the prompt is too short.
    pub loss_trace: Vec<f64>,
    pub config: SlotConfig,
    /// Set when optimization was skipped for a reason other than `T = 0`.
    pub warning: Option<String>,
    /// Final hidden features of the prompt (without the delta).
    pub hidden: Matrix,
    pub cache: KvCache,
}

/// Serializable summary of an [`AdaptedSample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedRecord {
    pub prompt_ids: Vec<TokenId>,
    pub delta: Delta,
    pub loss_trace: Vec<f64>,
    pub config: SlotConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl AdaptedSample {
    pub fn to_record(&self) -> AdaptedRecord {
        AdaptedRecord {
            prompt_ids: self.prompt.clone(),
            delta: self.delta.clone(),
            loss_trace: self.loss_trace.clone(),
            config: self.config.clone(),
            warning: self.warning.clone(),
        }
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_trace.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

/// Optimizes a delta for fixed hidden features. Returns the delta, the loss
/// trace and an optional warning (prompts shorter than two tokens are left
/// unadapted).
pub fn optimize_from_hidden(
    ckpt: &Checkpoint,
    hidden: &Matrix,
    prompt: &[TokenId],
    config: &SlotConfig,
) -> Result<(Delta, Vec<f64>, Option<String>), SlotError> {
    config.validate()?;
    let d = ckpt.hidden_dim();
    let mut delta = Delta::zeros(d);
    if config.steps == 0 {
        return Ok((delta, Vec::new(), None));
    }
    if prompt.len() < 2 {
        let warning = format!("prompt has {} token(s); delta left at zero", prompt.len());
        log::warn!("{warning}");
        return Ok((delta, Vec::new(), Some(warning)));
    }
    let objective = PromptObjective::new(ckpt, hidden, prompt, config.reduction)?;
    let mut state = OptimizerState::new(d);
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..config.steps {
        let (loss, mut grad) = objective.loss_and_gradient(&delta)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SlotError::NonFinite { step });
        }
        trace.push(loss);
        state.step(&mut delta, &mut grad, config)?;
    }
    let last = objective.loss(&delta)?;
    if !last.is_finite() || delta.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(SlotError::NonFinite { step: config.steps });
    }
    trace.push(last);
    Ok((delta, trace, None))
}

/// Prefills `prompt` and optimizes its delta.
pub fn optimize_delta(ckpt: &Checkpoint, prompt: &[TokenId], config: &SlotConfig) -> Result<AdaptedSample, SlotError> {
    let Prefill { hidden, cache } = prefill(ckpt, prompt)?;
    let (delta, loss_trace, warning) = optimize_from_hidden(ckpt, &hidden, prompt, config)?;
    Ok(AdaptedSample {
        prompt: prompt.to_vec(),
        delta,
        loss_trace,
        config: config.clone(),
        warning,
        hidden,
        cache,
    })
}

/// Adapts every prompt independently on a pool of `workers` threads. Results
/// keep the input order and one failure does not affect the others.
pub fn run_batch(
    ckpt: &Checkpoint,
    prompts: &[Vec<TokenId>],
    config: &SlotConfig,
    workers: usize,
) -> Result<Vec<Result<AdaptedSample, SlotError>>, SlotError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SlotError::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(|| prompts.par_iter().map(|p| optimize_delta(ckpt, p, config)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic::tiny_bundle;
    use crate::slot::{prompt_loss, LossReduction};

    fn prompts(bundle: &crate::model::ModelBundle) -> Vec<Vec<TokenId>> {
        [
            "The farmer has 12 cows.",
            "Let us think step by step",
            "She reads 20 pages",
            "apples",
        ]
        .iter()
        .map(|s| bundle.tokenizer.encode(s))
        .collect()
    }

    #[test]
    fn zero_steps_leave_delta_exactly_zero() {
        let bundle = tiny_bundle(16, 2, 2, 1);
        let p = bundle.tokenizer.encode("the lazy dog");
        let s = optimize_delta(&bundle.checkpoint, &p, &SlotConfig::with_steps(0)).unwrap();
        assert!(s.delta.is_zero());
        assert!(s.loss_trace.is_empty());
        assert_eq!(s.warning, None);
    }

    #[test]
    fn trace_has_one_entry_per_iterate() {
        let bundle = tiny_bundle(16, 2, 2, 1);
        let p = bundle.tokenizer.encode("the lazy dog jumps");
        for steps in [1, 3, 5] {
            let s = optimize_delta(&bundle.checkpoint, &p, &SlotConfig::with_steps(steps)).unwrap();
            assert_eq!(s.loss_trace.len(), steps + 1);
            let direct = prompt_loss(&bundle.checkpoint, &s.hidden, &s.delta, &p, LossReduction::Mean).unwrap();
            assert!((s.final_loss().unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_prompt_is_flagged() {
        let bundle = tiny_bundle(16, 1, 2, 1);
        let s = optimize_delta(&bundle.checkpoint, &[5], &SlotConfig::default()).unwrap();
        assert!(s.delta.is_zero());
        assert!(s.warning.unwrap().contains("1 token"));
    }

    #[test]
    fn batch_order_does_not_matter() {
        let bundle = tiny_bundle(16, 2, 2, 3);
        let ps = prompts(&bundle);
        let forward: Vec<_> = run_batch(&bundle.checkpoint, &ps, &SlotConfig::default(), 2)
            .unwrap()
            .into_iter()
            .map(|r| r.unwrap().to_record())
            .collect();
        let mut reversed_prompts = ps.clone();
        reversed_prompts.reverse();
        let mut reversed: Vec<_> = run_batch(&bundle.checkpoint, &reversed_prompts, &SlotConfig::default(), 3)
            .unwrap()
            .into_iter()
            .map(|r| r.unwrap().to_record())
            .collect();
        reversed.reverse();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn identical_prompts_get_identical_deltas() {
        let bundle = tiny_bundle(16, 2, 2, 3);
        let p = bundle.tokenizer.encode("over the lazy dog");
        let out = run_batch(&bundle.checkpoint, &[p.clone(), p], &SlotConfig::default(), 2).unwrap();
        let a = out[0].as_ref().unwrap();
        let b = out[1].as_ref().unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn batch_isolates_failures() {
        let bundle = tiny_bundle(16, 1, 2, 3);
        let too_big = bundle.checkpoint.vocab_size() as TokenId;
        let ps = vec![vec![1, 2, 3], vec![1, too_big], vec![4, 5]];
        let out = run_batch(&bundle.checkpoint, &ps, &SlotConfig::default(), 1).unwrap();
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
    }

    #[test]
    fn record_json_shape() {
        let bundle = tiny_bundle(8, 1, 2, 3);
        let s = optimize_delta(&bundle.checkpoint, &[1, 2, 3], &SlotConfig::with_steps(2)).unwrap();
        let json = serde_json::to_value(s.to_record()).unwrap();
        assert_eq!(json["prompt_ids"], serde_json::json!([1, 2, 3]));
        assert_eq!(json["delta"].as_array().unwrap().len(), 8);
        assert_eq!(json["loss_trace"].as_array().unwrap().len(), 3);
        assert_eq!(json["config"]["steps"], 2);
        assert!(json.get("warning").is_none());
        let back: AdaptedRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, s.to_record());
    }
}
