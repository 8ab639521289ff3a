//! Next-token cross-entropy of a prompt under delta-shifted hidden features
//! and its exact gradient with respect to the delta.
//!
//! With `z_i = W_LM (h_i + δ)` and target `t_i = x_{i+1}`:
//!
//! ```text
//! L(δ)   = c · Σ_{i<n} ( logsumexp(z_i) − z_i[t_i] )
//! ∇_δ L  = c · Σ_{i<n} W_LMᵀ ( softmax(z_i) − e_{t_i} )
//! ```
//!
//! where `c = 1/(n−1)` for mean reduction and `1` for sum. The delta enters
//! after the last hidden layer, so no backward pass through the model is
//! needed.
//!
//! Two evaluation routes are provided. [`prompt_loss`] / [`delta_gradient`]
//! materialize the shifted logits directly. [`PromptObjective`] caches the
//! unshifted logits once and adds the rank-1 shift `W_LM δ` per step, which
//! makes each optimization step cost two passes over `W_LM` regardless of
//! prompt length.

use super::{add_delta_row, Delta, LossReduction, SlotError};
use crate::kernels::{self, Matrix, WeightMatrix};
use crate::model::{self, Checkpoint, TokenId};

fn check_inputs(ckpt: &Checkpoint, hidden: &Matrix, delta: &Delta, prompt: &[TokenId]) -> Result<(), SlotError> {
    if prompt.len() < 2 {
        return Err(SlotError::PromptTooShort { len: prompt.len() });
    }
    if hidden.rows() != prompt.len() {
        return Err(SlotError::RowMismatch {
            rows: hidden.rows(),
            tokens: prompt.len(),
        });
    }
    let d = ckpt.hidden_dim();
    for width in [hidden.cols(), delta.len()] {
        if width != d {
            return Err(SlotError::WidthMismatch {
                expected: d,
                actual: width,
            });
        }
    }
    if let Some(&id) = prompt.iter().find(|&&id| id as usize >= ckpt.vocab_size()) {
        return Err(model::ModelError::TokenOutOfRange {
            id,
            vocab_size: ckpt.vocab_size(),
        }
        .into());
    }
    Ok(())
}

fn scale(reduction: LossReduction, terms: usize) -> f64 {
    match reduction {
        LossReduction::Mean => 1.0 / terms as f64,
        LossReduction::Sum => 1.0,
    }
}

/// Logits of the first `n − 1` rows of `H + δ` (the rows that predict a
/// next token).
fn shifted_logits(ckpt: &Checkpoint, hidden: &Matrix, delta: &Delta) -> Result<Matrix, SlotError> {
    let predictors = hidden.slice_rows(0, hidden.rows() - 1);
    let shifted = super::apply_delta(&predictors, delta)?;
    Ok(model::lm_logits(ckpt, &shifted)?)
}

/// Prompt loss computed from explicitly shifted logits.
pub fn prompt_loss(
    ckpt: &Checkpoint,
    hidden: &Matrix,
    delta: &Delta,
    prompt: &[TokenId],
    reduction: LossReduction,
) -> Result<f64, SlotError> {
    check_inputs(ckpt, hidden, delta, prompt)?;
    let logits = shifted_logits(ckpt, hidden, delta)?;
    let total: f64 = logits
        .iter_rows()
        .zip(&prompt[1..])
        .map(|(row, &t)| kernels::log_sum_exp(row) - row[t as usize])
        .sum();
    Ok(total * scale(reduction, prompt.len() - 1))
}

/// Gradient of [`prompt_loss`] with respect to `delta`, accumulated one
/// position at a time: `Σ_i W_LMᵀ (p_i − e_{t_i})`.
pub fn delta_gradient(
    ckpt: &Checkpoint,
    hidden: &Matrix,
    delta: &Delta,
    prompt: &[TokenId],
    reduction: LossReduction,
) -> Result<Vec<f64>, SlotError> {
    check_inputs(ckpt, hidden, delta, prompt)?;
    let mut probs = kernels::row_softmax(&shifted_logits(ckpt, hidden, delta)?);
    let mut grad = vec![0.0; ckpt.hidden_dim()];
    for (i, &t) in prompt[1..].iter().enumerate() {
        let row = probs.row_mut(i);
        row[t as usize] -= 1.0;
        let term = kernels::weighted_row_sum(ckpt.lm_head(), row)?;
        for (g, x) in grad.iter_mut().zip(term) {
            *g += x;
        }
    }
    let c = scale(reduction, prompt.len() - 1);
    grad.iter_mut().for_each(|g| *g *= c);
    Ok(grad)
}

/// Prompt loss with the unshifted logits cached.
///
/// `W_LM (h_i + δ) = W_LM h_i + W_LM δ`, so each evaluation needs one
/// matrix-vector product for the shift and, for the gradient, one for
/// `W_LMᵀ Σ_i p_i`; the target term `Σ_i W_LM[t_i]` is constant.
#[derive(Debug, Clone)]
pub struct PromptObjective<'a> {
    head: &'a WeightMatrix,
    base_logits: Matrix,
    targets: Vec<TokenId>,
    target_rows_sum: Vec<f64>,
    scale: f64,
}

impl<'a> PromptObjective<'a> {
    pub fn new(
        ckpt: &'a Checkpoint,
        hidden: &Matrix,
        prompt: &[TokenId],
        reduction: LossReduction,
    ) -> Result<Self, SlotError> {
        check_inputs(ckpt, hidden, &Delta::zeros(ckpt.hidden_dim()), prompt)?;
        let predictors = hidden.slice_rows(0, hidden.rows() - 1);
        let base_logits = model::lm_logits(ckpt, &predictors)?;
        let head = ckpt.lm_head();
        let mut counts = vec![0.0; head.rows()];
        for &t in &prompt[1..] {
            counts[t as usize] += 1.0;
        }
        let target_rows_sum = kernels::weighted_row_sum(head, &counts)?;
        Ok(Self {
            head,
            base_logits,
            targets: prompt[1..].to_vec(),
            target_rows_sum,
            scale: scale(reduction, prompt.len() - 1),
        })
    }

    /// Number of next-token terms (`n − 1`).
    pub fn terms(&self) -> usize {
        self.targets.len()
    }

    pub fn loss(&self, delta: &Delta) -> Result<f64, SlotError> {
        let shift = self.shift(delta)?;
        let mut row = vec![0.0; shift.len()];
        let mut total = 0.0;
        for (i, &t) in self.targets.iter().enumerate() {
            shifted_row(self.base_logits.row(i), &shift, &mut row);
            total += kernels::log_sum_exp(&row) - row[t as usize];
        }
        Ok(total * self.scale)
    }

    pub fn loss_and_gradient(&self, delta: &Delta) -> Result<(f64, Vec<f64>), SlotError> {
        let shift = self.shift(delta)?;
        let mut row = vec![0.0; shift.len()];
        let mut prob_sum = vec![0.0; shift.len()];
        let mut total = 0.0;
        for (i, &t) in self.targets.iter().enumerate() {
            shifted_row(self.base_logits.row(i), &shift, &mut row);
            let target_logit = row[t as usize];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                z += *e;
            }
            // Same arithmetic as `kernels::log_sum_exp`, reusing the exps.
            total += (max + z.ln()) - target_logit;
            for (acc, &e) in prob_sum.iter_mut().zip(&row) {
                *acc += e / z;
            }
        }
        let mut grad = kernels::weighted_row_sum(self.head, &prob_sum)?;
        for (g, target) in grad.iter_mut().zip(&self.target_rows_sum) {
            *g = (*g - target) * self.scale;
        }
        Ok((total * self.scale, grad))
    }

    /// The logit shift `W_LM δ`.
    fn shift(&self, delta: &Delta) -> Result<Vec<f64>, SlotError> {
        if delta.len() != self.head.cols() {
            return Err(SlotError::WidthMismatch {
                expected: self.head.cols(),
                actual: delta.len(),
            });
        }
        if delta.is_zero() {
            return Ok(vec![0.0; self.head.rows()]);
        }
        Ok(kernels::matvec(self.head, delta.as_slice())?)
    }
}

#[inline]
fn shifted_row(base: &[f64], shift: &[f64], out: &mut [f64]) {
    for ((o, &b), &s) in out.iter_mut().zip(base).zip(shift) {
        *o = b + s;
    }
}

/// Logits for one hidden row with the delta added (the generation-time
/// path). `hidden_row` is consumed as scratch.
pub(crate) fn next_token_logits(
    ckpt: &Checkpoint,
    mut hidden_row: Vec<f64>,
    delta: Option<&Delta>,
) -> Result<Vec<f64>, SlotError> {
    if let Some(d) = delta {
        add_delta_row(&mut hidden_row, d);
    }
    Ok(kernels::matvec(ckpt.lm_head(), &hidden_row)?)
}
