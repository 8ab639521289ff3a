use serde::{Deserialize, Serialize};

use super::{Delta, SlotConfig, SlotError, UpdateRule};

/// First and second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl OptimizerState {
    pub fn new(width: usize) -> Self {
        Self {
            m: vec![0.0; width],
            v: vec![0.0; width],
            t: 0,
        }
    }

    /// Applies one update to `delta` in place.
    ///
    /// AdamW: `δ ← δ − η (m̂ / (√v̂ + ε) + λ δ)` with bias-corrected moments
    /// and the decay term evaluated at the pre-update `δ`. Clipping (if
    /// configured) rescales `grad` before the moments see it.
    pub fn step(&mut self, delta: &mut Delta, grad: &mut [f64], config: &SlotConfig) -> Result<(), SlotError> {
        if grad.len() != delta.len() || self.m.len() != delta.len() {
            return Err(SlotError::WidthMismatch {
                expected: delta.len(),
                actual: grad.len(),
            });
        }
        if let Some(c) = config.clip_norm {
            clip_global_norm(grad, c);
        }
        self.t += 1;
        let lr = config.learning_rate;
        match config.update_rule {
            UpdateRule::GradientDescent => {
                for (d, g) in delta.as_mut_slice().iter_mut().zip(grad.iter()) {
                    *d -= lr * g;
                }
            }
            UpdateRule::AdamW => {
                let (b1, b2) = (config.beta1, config.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (((d, &g), m), v) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.iter())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *d -= lr * (m_hat / (v_hat.sqrt() + config.adam_eps) + config.weight_decay * *d);
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adamw_step_moves_by_learning_rate() {
        // After one step m̂ = g and v̂ = g², so each coordinate moves by
        // η·g/(|g| + ε) ≈ η·sign(g).
        let config = SlotConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut delta = Delta::zeros(2);
        let mut state = OptimizerState::new(2);
        state.step(&mut delta, &mut [10.0, -10.0], &config).unwrap();
        let expected = 0.01 * 10.0 / (10.0 + 1e-5);
        assert!((delta.as_slice()[0] + expected).abs() < 1e-15);
        assert!((delta.as_slice()[1] - expected).abs() < 1e-15);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn decay_uses_pre_update_delta() {
        let config = SlotConfig {
            weight_decay: 0.5,
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut delta = Delta::from_vec(vec![2.0]);
        let mut state = OptimizerState::new(1);
        state.step(&mut delta, &mut [0.0], &config).unwrap();
        // Zero gradient: only decay acts, δ = 2 − 0.1·0.5·2.
        assert!((delta.as_slice()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn gradient_descent_rule() {
        let config = SlotConfig {
            update_rule: UpdateRule::GradientDescent,
            learning_rate: 0.5,
            ..Default::default()
        };
        let mut delta = Delta::from_vec(vec![1.0, 1.0]);
        OptimizerState::new(2)
            .step(&mut delta, &mut [2.0, -4.0], &config)
            .unwrap();
        assert_eq!(delta.as_slice(), &[0.0, 3.0]);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = [0.1, 0.1];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, [0.1, 0.1]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut state = OptimizerState::new(2);
        let err = state.step(&mut Delta::zeros(2), &mut [1.0], &SlotConfig::default());
        assert!(matches!(err, Err(SlotError::WidthMismatch { .. })));
    }
}
