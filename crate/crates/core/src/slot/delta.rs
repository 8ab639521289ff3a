use serde::{Deserialize, Serialize};

use super::SlotError;
use crate::kernels::Matrix;

/// The sample-specific vector added to every row of the final hidden
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Delta(Vec<f64>);

impl Delta {
    pub fn zeros(width: usize) -> Self {
        Self(vec![0.0; width])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `H'[i, j] = H[i, j] + δ[j]` for every row `i`.
pub fn apply_delta(hidden: &Matrix, delta: &Delta) -> Result<Matrix, SlotError> {
    if hidden.cols() != delta.len() {
        return Err(SlotError::WidthMismatch {
            expected: hidden.cols(),
            actual: delta.len(),
        });
    }
    let mut out = hidden.clone();
    for i in 0..out.rows() {
        add_delta_row(out.row_mut(i), delta);
    }
    Ok(out)
}

#[inline]
pub(crate) fn add_delta_row(row: &mut [f64], delta: &Delta) {
    for (h, d) in row.iter_mut().zip(delta.as_slice()) {
        *h += d;
    }
}
