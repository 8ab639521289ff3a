//! Externally published measurements for the method at 1.5B–7B scale, kept
//! alongside local reports for comparison. None of these are reproduced
//! locally and they are never mixed into local statistics.

use serde::{Deserialize, Serialize};

pub const NOT_REPRODUCED: &str = "published result, not locally reproduced";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedAccuracy {
    pub status: String,
    pub model: String,
    pub benchmark: String,
    pub baseline_percent: f64,
    pub adapted_percent: f64,
    pub gain_points: f64,
}

/// Qwen2.5-7B on GSM8K.
pub fn headline_accuracy() -> PublishedAccuracy {
    PublishedAccuracy {
        status: NOT_REPRODUCED.into(),
        model: "Qwen2.5-7B".into(),
        benchmark: "GSM8K".into(),
        baseline_percent: 57.54,
        adapted_percent: 66.19,
        gain_points: 8.65,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedInferenceTime {
    pub status: String,
    pub model: String,
    pub hardware: String,
    pub prompts: usize,
    pub benchmark: String,
    /// `(T, total seconds)`, `T = 0` being the unadapted model.
    pub total_seconds: Vec<(usize, f64)>,
}

impl PublishedInferenceTime {
    /// Relative increase of the last row over the `T = 0` row.
    pub fn final_overhead(&self) -> f64 {
        let base = self.total_seconds[0].1;
        (self.total_seconds.last().expect("nonempty").1 - base) / base
    }
}

/// 30 GSM8K questions, Qwen-2.5-7B, one V100.
pub fn inference_time() -> PublishedInferenceTime {
    PublishedInferenceTime {
        status: NOT_REPRODUCED.into(),
        model: "Qwen-2.5-7B".into(),
        hardware: "1x NVIDIA V100".into(),
        prompts: 30,
        benchmark: "GSM8K".into(),
        total_seconds: vec![
            (0, 161.49),
            (1, 158.72),
            (2, 173.93),
            (3, 167.07),
            (4, 176.03),
            (5, 174.32),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedBaseline {
    pub status: String,
    pub model: String,
    pub benchmark: String,
    pub accuracy_percent: f64,
    pub si: f64,
    pub so: f64,
}

/// Unadapted row of the (T, η) grid: DeepSeek-R1-Distill-Qwen-1.5B on
/// AIME-24.
pub fn grid_baseline() -> PublishedBaseline {
    PublishedBaseline {
        status: NOT_REPRODUCED.into(),
        model: "DeepSeek-R1-Distill-Qwen-1.5B".into(),
        benchmark: "AIME-24".into(),
        accuracy_percent: 26.67,
        si: 12.2,
        so: 967.84,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headline_gain_is_consistent() {
        let h = headline_accuracy();
        assert!((h.adapted_percent - h.baseline_percent - h.gain_points).abs() < 1e-9);
    }

    #[test]
    fn five_step_overhead_rounds_to_7_9_percent() {
        let t = inference_time();
        assert_eq!((t.final_overhead() * 1000.0).round() / 10.0, 7.9);
        assert!((t.total_seconds[5].1 - t.total_seconds[0].1 - 12.83).abs() < 1e-9);
    }
}
