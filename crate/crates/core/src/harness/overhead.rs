use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bench::run_arm;
use super::published::{self, PublishedInferenceTime};
use super::so_spread;
use crate::model::{Checkpoint, TokenId};
use crate::slot::{GenerationConfig, SlotConfig, SlotError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadConfig {
    /// `0` (the unadapted model) is always measured, first.
    pub steps_list: Vec<usize>,
    pub repetitions: usize,
    /// One untimed pass over the first prompt per configuration before
    /// measuring.
    pub warmup: bool,
    pub slot: SlotConfig,
    pub generation: GenerationConfig,
}

impl Default for OverheadConfig {
    fn default() -> Self {
        let mut generation = GenerationConfig::greedy(32);
        generation.stop_at_eos = false;
        Self {
            steps_list: vec![0, 1, 3, 5],
            repetitions: 3,
            warmup: true,
            slot: SlotConfig::default(),
            generation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadTiming {
    /// Total seconds over all prompts, one entry per repetition.
    pub repetition_seconds: Vec<f64>,
    pub mean_seconds: f64,
    /// `mean / mean(T = 0) − 1`.
    pub relative_overhead: f64,
    pub mean_si: f64,
    pub mean_so: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub steps: usize,
    pub prompt_tokens: usize,
    pub new_tokens: usize,
    pub timing: OverheadTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub prompts: usize,
    pub config: OverheadConfig,
    pub rows: Vec<OverheadRow>,
    /// Spread of mean SO over the `T ≥ 1` rows.
    pub so_spread: Option<f64>,
    pub published: PublishedInferenceTime,
}

/// Wall-clock cost of each step count over the same prompts and generation
/// settings. Runs single-threaded on the caller's thread. Every prompt is run
/// under all configurations back to back, in an order rotated per prompt, so
/// slow drift in machine speed lands on all rows alike.
pub fn measure_overhead(
    ckpt: &Checkpoint,
    prompts: &[Vec<TokenId>],
    eos: Option<TokenId>,
    config: &OverheadConfig,
) -> Result<OverheadReport, SlotError> {
    config.slot.validate()?;
    if prompts.is_empty() {
        return Err(SlotError::InvalidConfig("no prompts to time".into()));
    }
    let mut steps_list = vec![0];
    steps_list.extend(config.steps_list.iter().copied().filter(|&t| t != 0));
    steps_list.dedup();
    let arm = |t: usize| {
        (t > 0).then(|| SlotConfig {
            steps: t,
            ..config.slot.clone()
        })
    };

    if config.warmup {
        for &t in &steps_list {
            run_arm(ckpt, &prompts[0], arm(t).as_ref(), &config.generation, eos)?;
        }
    }
    let reps = config.repetitions.max(1);
    let mut seconds = vec![vec![0.0; reps]; steps_list.len()];
    let mut si = vec![0.0; steps_list.len()];
    let mut so = vec![0.0; steps_list.len()];
    let mut new_tokens = vec![0; steps_list.len()];
    let arms: Vec<Option<SlotConfig>> = steps_list.iter().map(|&t| arm(t)).collect();
    let configs = steps_list.len();
    #[allow(clippy::needless_range_loop)]
    for rep in 0..reps {
        for (i, p) in prompts.iter().enumerate() {
            for k in 0..configs {
                let row = (i + rep + k) % configs;
                let started = Instant::now();
                let (out, _, _, _, timing) = run_arm(ckpt, p, arms[row].as_ref(), &config.generation, eos)?;
                seconds[row][rep] += started.elapsed().as_secs_f64();
                si[row] += timing.si;
                so[row] += timing.so;
                if rep == 0 {
                    new_tokens[row] += out.tokens.len();
                }
            }
        }
    }
    let runs = (reps * prompts.len()) as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let base = mean(&seconds[0]);
    let rows: Vec<OverheadRow> = steps_list
        .iter()
        .enumerate()
        .map(|(row, &steps)| OverheadRow {
            steps,
            prompt_tokens: prompts.iter().map(Vec::len).sum(),
            new_tokens: new_tokens[row],
            timing: OverheadTiming {
                mean_seconds: mean(&seconds[row]),
                relative_overhead: mean(&seconds[row]) / base - 1.0,
                repetition_seconds: seconds[row].clone(),
                mean_si: si[row] / runs,
                mean_so: so[row] / runs,
            },
        })
        .collect();
    let adapted_so: Vec<f64> = rows.iter().filter(|r| r.steps >= 1).map(|r| r.timing.mean_so).collect();
    Ok(OverheadReport {
        prompts: prompts.len(),
        config: config.clone(),
        so_spread: so_spread(&adapted_so),
        rows,
        published: published::inference_time(),
    })
}

impl OverheadReport {
    pub fn row(&self, steps: usize) -> Option<&OverheadRow> {
        self.rows.iter().find(|r| r.steps == steps)
    }

    pub fn to_text(&self) -> String {
        let label = |t: usize| if t == 0 { "baseline".to_string() } else { t.to_string() };
        let mut out = String::new();
        let mut line = |name: &str, cells: Vec<String>| {
            out.push_str(&format!("{name:<20}"));
            for c in cells {
                out.push_str(&format!(" | {c:>10}"));
            }
            out.push('\n');
        };
        line("SLOT steps", self.rows.iter().map(|r| label(r.steps)).collect());
        line(
            "total time (s)",
            self.rows
                .iter()
                .map(|r| format!("{:.2}", r.timing.mean_seconds))
                .collect(),
        );
        line(
            "relative overhead",
            self.rows
                .iter()
                .map(|r| format!("{:+.1}%", 100.0 * r.timing.relative_overhead))
                .collect(),
        );
        line(
            "mean SI (tok/s)",
            self.rows.iter().map(|r| format!("{:.2}", r.timing.mean_si)).collect(),
        );
        line(
            "mean SO (tok/s)",
            self.rows.iter().map(|r| format!("{:.2}", r.timing.mean_so)).collect(),
        );
        out.push_str(&format!(
            "\n{} prompts, {} repetition(s), {} new tokens per prompt (max){}\n",
            self.prompts,
            self.config.repetitions.max(1),
            self.config.generation.max_new_tokens,
            if self.config.warmup {
                ", one warm-up pass excluded"
            } else {
                ""
            }
        ));
        if let Some(s) = self.so_spread {
            out.push_str(&format!("SO spread across T >= 1: {:.1}%\n", 100.0 * s));
        }
        let p = &self.published;
        out.push_str(&format!(
            "\n{} ({}, {} {} prompts, {}):\n",
            p.status, p.model, p.prompts, p.benchmark, p.hardware
        ));
        out.push_str(&format!("{:<20}", "SLOT steps"));
        for (t, _) in &p.total_seconds {
            out.push_str(&format!(" | {:>10}", label(*t)));
        }
        out.push_str(&format!("\n{:<20}", "total time (s)"));
        for (_, s) in &p.total_seconds {
            out.push_str(&format!(" | {s:>10.2}"));
        }
        out.push_str(&format!("\nfinal-row overhead: {:+.1}%\n", 100.0 * p.final_overhead()));
        out
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "steps",
            "mean_seconds",
            "relative_overhead",
            "mean_si",
            "mean_so",
            "prompt_tokens",
            "new_tokens",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.steps.to_string(),
                r.timing.mean_seconds.to_string(),
                r.timing.relative_overhead.to_string(),
                r.timing.mean_si.to_string(),
                r.timing.mean_so.to_string(),
                r.prompt_tokens.to_string(),
                r.new_tokens.to_string(),
            ])?;
        }
        super::csv_string(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic::tiny_bundle;

    #[test]
    fn baseline_row_first_and_zero_overhead() {
        let bundle = tiny_bundle(16, 1, 2, 1);
        let prompts = vec![vec![1, 2, 3, 4], vec![5, 6, 7]];
        let cfg = OverheadConfig {
            steps_list: vec![3, 1],
            repetitions: 2,
            warmup: true,
            generation: GenerationConfig {
                stop_at_eos: false,
                ..GenerationConfig::greedy(4)
            },
            ..Default::default()
        };
        let r = measure_overhead(&bundle.checkpoint, &prompts, None, &cfg).unwrap();
        let steps: Vec<usize> = r.rows.iter().map(|r| r.steps).collect();
        assert_eq!(steps, [0, 3, 1]);
        assert_eq!(r.rows[0].timing.relative_overhead, 0.0);
        assert!(r
            .rows
            .iter()
            .all(|row| row.new_tokens == 8 && row.timing.repetition_seconds.len() == 2));
        assert!(r.so_spread.is_some());
        let text = r.to_text();
        assert!(text.contains("relative overhead") && text.contains("161.49"));
        assert_eq!(r.to_csv().unwrap().lines().count(), 4);
        assert!(measure_overhead(&bundle.checkpoint, &[], None, &cfg).is_err());
    }
}
