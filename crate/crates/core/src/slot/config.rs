use serde::{Deserialize, Serialize};

use super::SlotError;

/// How per-position cross-entropy terms are combined into the prompt loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Average over the `n - 1` next-token predictions.
    #[default]
    Mean,
    /// Plain sum over the `n - 1` predictions.
    Sum,
}

/// Update rule applied to the delta each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    #[default]
    AdamW,
    /// `δ ← δ − η g`, no moments and no decay. Used to check descent.
    GradientDescent,
}

/// Hyperparameters for the per-sample delta optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotConfig {
    /// Optimization steps `T`; zero leaves the model untouched.
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global L2 norm bound on the gradient; `None` disables clipping.
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub reduction: LossReduction,
    #[serde(default)]
    pub update_rule: UpdateRule,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            learning_rate: 0.01,
            weight_decay: 1e-8,
            adam_eps: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: None,
            reduction: LossReduction::Mean,
            update_rule: UpdateRule::AdamW,
        }
    }
}

impl SlotConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SlotError> {
        let bad = |msg: String| Err(SlotError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam eps must be positive, got {}", self.adam_eps));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SlotConfig::default();
        assert_eq!(c.steps, 3);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.weight_decay, 1e-8);
        assert_eq!(c.adam_eps, 1e-5);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
        assert_eq!(c.clip_norm, None);
        assert_eq!(c.reduction, LossReduction::Mean);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            SlotConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            SlotConfig {
                weight_decay: -1.0,
                ..Default::default()
            },
            SlotConfig {
                adam_eps: 0.0,
                ..Default::default()
            },
            SlotConfig {
                beta1: 1.0,
                ..Default::default()
            },
            SlotConfig {
                beta2: -0.1,
                ..Default::default()
            },
            SlotConfig {
                clip_norm: Some(0.0),
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn serde_names() {
        let json = serde_json::to_value(SlotConfig::default()).unwrap();
        assert_eq!(json["reduction"], "mean");
        assert_eq!(json["update_rule"], "adam_w");
    }
}
