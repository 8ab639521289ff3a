//! Datasets, benchmark runs, hyperparameter sweeps and overhead timing.

pub mod bench;
mod dataset;
mod extract;
pub mod overhead;
pub mod published;
mod render;
pub mod sweep;

pub use bench::{run_benchmark, ArmOutcome, ArmSummary, Arms, BenchConfig, BenchReport, RunMetrics};
pub use dataset::{load_dataset, parse_dataset, to_jsonl, DatasetError, EvalRecord, ExtractionRule};
pub use extract::{extract_answer, normalize_answer, reference_answer};
pub use overhead::{measure_overhead, OverheadConfig, OverheadReport};
pub use render::strip_timing;
pub use sweep::{run_sweep, SweepConfig, SweepReport};

/// `(max − min) / min` of positive values; `None` for fewer than two values
/// or a nonpositive minimum.
pub fn so_spread(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min > 0.0).then(|| (max - min) / min)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, csv::Error> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
