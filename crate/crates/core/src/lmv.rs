//! The logit shift `W_LM δ` induced by an optimized delta, and the tokens it
//! strengthens or suppresses most.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::kernels::{self, KernelError};
use crate::model::{Checkpoint, TokenId, Tokenizer};
use crate::slot::{Delta, SlotError};

/// `W_LM · δ`: the same additive shift applies to the logits at every
/// position.
pub fn compute_lmv(ckpt: &Checkpoint, delta: &Delta) -> Result<Vec<f64>, SlotError> {
    if delta.len() != ckpt.hidden_dim() {
        return Err(SlotError::WidthMismatch {
            expected: ckpt.hidden_dim(),
            actual: delta.len(),
        });
    }
    Ok(kernels::matvec(ckpt.lm_head(), delta.as_slice())?)
}

/// Elementwise mean of several shift vectors of equal length.
pub fn mean_lmv(lmvs: &[Vec<f64>]) -> Result<Vec<f64>, SlotError> {
    let Some(first) = lmvs.first() else {
        return Err(SlotError::InvalidConfig("no shift vectors to average".into()));
    };
    let mut out = vec![0.0; first.len()];
    for v in lmvs {
        if v.len() != out.len() {
            return Err(SlotError::WidthMismatch {
                expected: out.len(),
                actual: v.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = lmvs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenShift {
    pub token_id: TokenId,
    pub token: String,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmvReport {
    /// What the vector is, e.g. `"sample gsm-3"` or `"mean over 50 samples"`.
    pub label: String,
    pub lmv: Vec<f64>,
    /// Largest shifts first.
    pub top_increased: Vec<TokenShift>,
    /// Most negative shifts first.
    pub top_decreased: Vec<TokenShift>,
    /// 1-based position of the end-of-sequence token when the whole
    /// vocabulary is sorted by ascending shift.
    pub eos_rank_in_decreased: Option<usize>,
}

/// Ranks tokens by signed shift. Ties go to the lower token id in both
/// directions.
pub fn rank_tokens(
    label: impl Into<String>,
    lmv: Vec<f64>,
    tokenizer: &Tokenizer,
    eos: Option<TokenId>,
    k: usize,
) -> Result<LmvReport, KernelError> {
    let shift = |i: usize| TokenShift {
        token_id: i as TokenId,
        token: tokenizer.display_token(i as TokenId),
        shift: lmv[i],
    };
    let top_increased = kernels::top_k(&lmv, k)?.into_iter().map(shift).collect();
    let negated: Vec<f64> = lmv.iter().map(|x| -x).collect();
    let top_decreased = kernels::top_k(&negated, k)?.into_iter().map(shift).collect();
    let eos_rank_in_decreased = eos.filter(|&e| (e as usize) < lmv.len()).map(|e| {
        let e = e as usize;
        let below = lmv
            .iter()
            .enumerate()
            .filter(|&(i, x)| x.total_cmp(&lmv[e]).then(i.cmp(&e)).is_lt())
            .count();
        below + 1
    });
    Ok(LmvReport {
        label: label.into(),
        lmv,
        top_increased,
        top_decreased,
        eos_rank_in_decreased,
    })
}

impl LmvReport {
    /// Two aligned columns of `rank  id  token  shift`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.label);
        if let Some(r) = self.eos_rank_in_decreased {
            let _ = writeln!(out, "end-of-sequence rank among decreased tokens: {r}");
        }
        for (title, list) in [("increased", &self.top_increased), ("decreased", &self.top_decreased)] {
            let width = list.iter().map(|t| t.token.chars().count()).max().unwrap_or(0).max(5);
            let _ = writeln!(out, "\ntop {title}");
            let _ = writeln!(out, "{:>4}  {:>7}  {:<width$}  {:>12}", "rank", "id", "token", "shift");
            for (i, t) in list.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:>4}  {:>7}  {:<width$}  {:>+12.6}",
                    i + 1,
                    t.token_id,
                    t.token,
                    t.shift
                );
            }
        }
        out
    }

    /// `token_id,token,shift` for the whole vocabulary.
    pub fn to_csv(&self, tokenizer: &Tokenizer) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["token_id", "token", "shift"])?;
        for (i, s) in self.lmv.iter().enumerate() {
            w.write_record([i.to_string(), tokenizer.display_token(i as TokenId), format!("{s:e}")])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
