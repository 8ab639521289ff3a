use serde::{Deserialize, Serialize};

use super::bench::{run_benchmark, ArmSummary, Arms, BenchConfig};
use super::published::{self, PublishedBaseline};
use super::{so_spread, EvalRecord};
use crate::model::ModelBundle;
use crate::slot::{DecodeMode, SlotConfig, SlotError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub steps_grid: Vec<usize>,
    pub lr_grid: Vec<f64>,
    /// Sampling seeds; each grid cell runs once per seed.
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SlotError> {
        if self.steps_grid.is_empty() || self.lr_grid.is_empty() || self.seeds.is_empty() {
            return Err(SlotError::InvalidConfig("sweep grids must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<ArmSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub failed_records: usize,
}

/// Spread of mean SO across the `T ≥ 1` rows of one learning-rate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoVariation {
    pub learning_rate: f64,
    pub steps: Vec<usize>,
    pub mean_so: Vec<f64>,
    /// `(max − min) / min`.
    pub relative_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTiming {
    pub so_variation: Vec<SoVariation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweep: SweepConfig,
    pub records: usize,
    pub baseline: Vec<ArmSummary>,
    pub cells: Vec<SweepCell>,
    pub published: PublishedBaseline,
    pub timing: SweepTiming,
}

/// One benchmark per `(T, η, seed)` cell plus one unadapted run per seed.
pub fn run_sweep(
    bundle: &ModelBundle,
    records: &[EvalRecord],
    sweep: &SweepConfig,
    base: &BenchConfig,
) -> Result<SweepReport, SlotError> {
    sweep.validate()?;
    let with_seed = |seed: u64| {
        let mut cfg = base.clone();
        if let DecodeMode::Temperature { temperature, .. } = cfg.generation.mode {
            cfg.generation.mode = DecodeMode::Temperature { temperature, seed };
        }
        cfg
    };
    let mut baseline = Vec::new();
    for &seed in &sweep.seeds {
        let cfg = BenchConfig {
            arms: Arms::BaselineOnly,
            ..with_seed(seed)
        };
        let report = run_benchmark(bundle, records, &cfg)?;
        baseline.push(report.baseline.expect("baseline arm ran"));
    }
    let mut cells = Vec::new();
    for &steps in &sweep.steps_grid {
        for &learning_rate in &sweep.lr_grid {
            for &seed in &sweep.seeds {
                let cfg = BenchConfig {
                    arms: Arms::SlotOnly,
                    slot: SlotConfig {
                        steps,
                        learning_rate,
                        ..base.slot.clone()
                    },
                    ..with_seed(seed)
                };
                let cell = match run_benchmark(bundle, records, &cfg) {
                    Ok(r) => SweepCell {
                        steps,
                        learning_rate,
                        seed,
                        summary: r.slot,
                        error: None,
                        failed_records: r.failed_records,
                    },
                    Err(e) => {
                        log::warn!("sweep cell T={steps} lr={learning_rate} seed={seed}: {e}");
                        SweepCell {
                            steps,
                            learning_rate,
                            seed,
                            summary: None,
                            error: Some(e.to_string()),
                            failed_records: records.len(),
                        }
                    }
                };
                cells.push(cell);
            }
        }
    }
    let so_variation = sweep
        .lr_grid
        .iter()
        .filter_map(|&lr| {
            let (steps, mean_so): (Vec<usize>, Vec<f64>) = sweep
                .steps_grid
                .iter()
                .filter(|&&t| t >= 1)
                .filter_map(|&t| mean_over_seeds(&cells, t, lr, |s| s.timing.mean_so).map(|so| (t, so)))
                .unzip();
            let relative_spread = so_spread(&mean_so)?;
            Some(SoVariation {
                learning_rate: lr,
                steps,
                mean_so,
                relative_spread,
            })
        })
        .collect();
    Ok(SweepReport {
        sweep: sweep.clone(),
        records: records.len(),
        baseline,
        cells,
        published: published::grid_baseline(),
        timing: SweepTiming { so_variation },
    })
}

fn mean_over_seeds(cells: &[SweepCell], steps: usize, lr: f64, f: impl Fn(&ArmSummary) -> f64) -> Option<f64> {
    let values: Vec<f64> = cells
        .iter()
        .filter(|c| c.steps == steps && c.learning_rate == lr)
        .filter_map(|c| c.summary.as_ref().map(&f))
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn mean_of(summaries: &[ArmSummary], f: impl Fn(&ArmSummary) -> f64) -> f64 {
    summaries.iter().map(f).sum::<f64>() / summaries.len().max(1) as f64
}

/// Up to two decimals with trailing zeros dropped: `12.2`, `26.67`.
pub fn short_decimal(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// `accuracy of 26.67%, SI of 12.2, SO of 967.84`.
pub fn baseline_caption(accuracy_percent: f64, si: f64, so: f64) -> String {
    format!(
        "accuracy of {}%, SI of {}, SO of {}",
        short_decimal(accuracy_percent),
        short_decimal(si),
        short_decimal(so)
    )
}

impl SweepReport {
    /// Rows per `T`, a column group (Acc% / SI / SO) per learning rate,
    /// values averaged over seeds.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let acc = mean_of(&self.baseline, |s| 100.0 * s.accuracy);
        let si = mean_of(&self.baseline, |s| s.timing.mean_si);
        let so = mean_of(&self.baseline, |s| s.timing.mean_so);
        out.push_str(&format!("baseline (T=0): {}\n", baseline_caption(acc, si, so)));
        let p = &self.published;
        out.push_str(&format!(
            "{} ({}, {}): {}\n\n",
            p.status,
            p.model,
            p.benchmark,
            baseline_caption(p.accuracy_percent, p.si, p.so)
        ));
        let mut header = format!("{:>4}", "T");
        let mut sub = format!("{:>4}", "");
        for lr in &self.sweep.lr_grid {
            header.push_str(&format!(" | {:^26}", format!("lr={lr}")));
            sub.push_str(&format!(" | {:>7} {:>8} {:>9}", "Acc%", "SI", "SO"));
        }
        out.push_str(&header);
        out.push('\n');
        out.push_str(&sub);
        out.push('\n');
        for &t in &self.sweep.steps_grid {
            out.push_str(&format!("{t:>4}"));
            for &lr in &self.sweep.lr_grid {
                let a = mean_over_seeds(&self.cells, t, lr, |s| 100.0 * s.accuracy);
                let si = mean_over_seeds(&self.cells, t, lr, |s| s.timing.mean_si);
                let so = mean_over_seeds(&self.cells, t, lr, |s| s.timing.mean_so);
                match (a, si, so) {
                    (Some(a), Some(si), Some(so)) => out.push_str(&format!(" | {a:>7.2} {si:>8.2} {so:>9.2}")),
                    _ => out.push_str(&format!(" | {:>26}", "failed")),
                }
            }
            out.push('\n');
        }
        for v in &self.timing.so_variation {
            out.push_str(&format!(
                "\nSO spread across T={:?} at lr={}: {:.1}%",
                v.steps,
                v.learning_rate,
                100.0 * v.relative_spread
            ));
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "steps",
            "learning_rate",
            "seed",
            "status",
            "accuracy",
            "mean_si",
            "mean_so",
            "failed_records",
        ])?;
        for (seed, b) in self.sweep.seeds.iter().zip(&self.baseline) {
            w.write_record([
                "0".to_string(),
                String::new(),
                seed.to_string(),
                "ok".into(),
                b.accuracy.to_string(),
                b.timing.mean_si.to_string(),
                b.timing.mean_so.to_string(),
                b.failed.to_string(),
            ])?;
        }
        for c in &self.cells {
            let (status, acc, si, so) = match &c.summary {
                Some(s) => (
                    "ok",
                    s.accuracy.to_string(),
                    s.timing.mean_si.to_string(),
                    s.timing.mean_so.to_string(),
                ),
                None => ("failed", String::new(), String::new(), String::new()),
            };
            w.write_record([
                c.steps.to_string(),
                c.learning_rate.to_string(),
                c.seed.to_string(),
                status.into(),
                acc,
                si,
                so,
                c.failed_records.to_string(),
            ])?;
        }
        super::csv_string(w)
    }
}
