use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::published::{self, PublishedAccuracy};
use super::{extract_answer, reference_answer, EvalRecord};
use crate::model::{Checkpoint, ModelBundle, ModelConfig, TokenId};
use crate::slot::{
    generate_from_prefill, optimize_delta, prefill, DecodeMode, GenerationConfig, GenerationOutput, SlotConfig,
    SlotError, StopReason,
};

/// Which arms of the comparison to run for each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arms {
    #[default]
    Both,
    SlotOnly,
    BaselineOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub slot: SlotConfig,
    pub generation: GenerationConfig,
    pub workers: usize,
    pub arms: Arms,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            slot: SlotConfig::default(),
            generation: GenerationConfig::greedy(128),
            workers: 1,
            arms: Arms::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub fingerprint: String,
    pub config: ModelConfig,
    pub tokenizer_vocab: usize,
}

impl ModelInfo {
    pub fn of(bundle: &ModelBundle) -> Self {
        Self {
            fingerprint: bundle.checkpoint.fingerprint(),
            config: bundle.checkpoint.config().clone(),
            tokenizer_vocab: bundle.tokenizer.vocab_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    /// Prefill plus all delta optimization steps.
    pub prompt_seconds: f64,
    pub generate_seconds: f64,
    pub wall_seconds: f64,
    /// Prompt tokens per prompt-stage second.
    pub si: f64,
    /// New tokens per generation-stage second.
    pub so: f64,
}

impl PhaseTiming {
    fn new(prompt_tokens: usize, new_tokens: usize, prompt_seconds: f64, generate_seconds: f64) -> Self {
        Self {
            prompt_seconds,
            generate_seconds,
            wall_seconds: prompt_seconds + generate_seconds,
            si: rate(prompt_tokens, prompt_seconds),
            so: rate(new_tokens, generate_seconds),
        }
    }
}

fn rate(tokens: usize, seconds: f64) -> f64 {
    if seconds > 0.0 {
        tokens as f64 / seconds
    } else {
        0.0
    }
}

/// Outcome of one record under one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub correct: bool,
    pub answer: Option<String>,
    pub output: String,
    pub output_ids: Vec<TokenId>,
    pub stop: StopReason,
    pub prompt_tokens: usize,
    pub new_tokens: usize,
    pub loss_trace: Vec<f64>,
    pub delta_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub timing: PhaseTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArmOutcome {
    Completed(RunMetrics),
    Failed { error: String },
}

impl ArmOutcome {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        match self {
            Self::Completed(m) => Some(m),
            Self::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordTiming {
    pub tokenize_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub id: String,
    pub reference_answer: String,
    pub prompt_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ArmOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<ArmOutcome>,
    pub timing: RecordTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryTiming {
    pub mean_si: f64,
    pub mean_so: f64,
    pub total_prompt_seconds: f64,
    pub total_generate_seconds: f64,
    pub total_wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub steps: usize,
    pub records: usize,
    pub completed: usize,
    pub failed: usize,
    pub correct: usize,
    /// `correct / records`; failed records count as incorrect.
    pub accuracy: f64,
    pub timing: SummaryTiming,
}

impl ArmSummary {
    fn collect<'a>(steps: usize, records: usize, outcomes: impl Iterator<Item = &'a ArmOutcome>) -> Self {
        let mut s = Self {
            steps,
            records,
            completed: 0,
            failed: 0,
            correct: 0,
            accuracy: 0.0,
            timing: SummaryTiming {
                mean_si: 0.0,
                mean_so: 0.0,
                total_prompt_seconds: 0.0,
                total_generate_seconds: 0.0,
                total_wall_seconds: 0.0,
            },
        };
        for o in outcomes {
            match o {
                ArmOutcome::Completed(m) => {
                    s.completed += 1;
                    s.correct += usize::from(m.correct);
                    s.timing.mean_si += m.timing.si;
                    s.timing.mean_so += m.timing.so;
                    s.timing.total_prompt_seconds += m.timing.prompt_seconds;
                    s.timing.total_generate_seconds += m.timing.generate_seconds;
                    s.timing.total_wall_seconds += m.timing.wall_seconds;
                }
                ArmOutcome::Failed { .. } => s.failed += 1,
            }
        }
        if s.completed > 0 {
            s.timing.mean_si /= s.completed as f64;
            s.timing.mean_so /= s.completed as f64;
        }
        if records > 0 {
            s.accuracy = s.correct as f64 / records as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportTiming {
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: ModelInfo,
    pub config: BenchConfig,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ArmSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<ArmSummary>,
    /// Adapted minus baseline accuracy, in percentage points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_gain_points: Option<f64>,
    /// Records with at least one failed arm.
    pub failed_records: usize,
    pub results: Vec<RecordResult>,
    pub published: PublishedAccuracy,
    pub timing: ReportTiming,
}

/// Runs every record through the configured arms. Records are independent
/// and spread over `config.workers` threads; per-record failures are
/// reported, not propagated.
pub fn run_benchmark(
    bundle: &ModelBundle,
    records: &[EvalRecord],
    config: &BenchConfig,
) -> Result<BenchReport, SlotError> {
    config.slot.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| SlotError::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<RecordResult> = pool.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| run_record(bundle, r, i, config))
            .collect()
    });
    let n = records.len();
    let baseline = (config.arms != Arms::SlotOnly)
        .then(|| ArmSummary::collect(0, n, results.iter().filter_map(|r| r.baseline.as_ref())));
    let slot = (config.arms != Arms::BaselineOnly)
        .then(|| ArmSummary::collect(config.slot.steps, n, results.iter().filter_map(|r| r.slot.as_ref())));
    let accuracy_gain_points = match (&baseline, &slot) {
        (Some(b), Some(s)) => Some(100.0 * (s.accuracy - b.accuracy)),
        _ => None,
    };
    let failed_records = results
        .iter()
        .filter(|r| {
            [&r.baseline, &r.slot]
                .iter()
                .any(|o| matches!(o, Some(ArmOutcome::Failed { .. })))
        })
        .count();
    for r in &results {
        for o in [&r.baseline, &r.slot].into_iter().flatten() {
            if let ArmOutcome::Failed { error } = o {
                log::warn!("record {}: {error}", r.id);
            }
        }
    }
    Ok(BenchReport {
        model: ModelInfo::of(bundle),
        config: config.clone(),
        records: n,
        baseline,
        slot,
        accuracy_gain_points,
        failed_records,
        results,
        published: published::headline_accuracy(),
        timing: ReportTiming {
            total_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Per-record generation settings: sampled decoding gets a seed offset by
/// the record index, so records draw independent streams and both arms of
/// one record draw the same stream.
fn record_generation(config: &GenerationConfig, index: usize) -> GenerationConfig {
    let mut g = config.clone();
    if let DecodeMode::Temperature { temperature, seed } = g.mode {
        g.mode = DecodeMode::Temperature {
            temperature,
            seed: seed.wrapping_add(index as u64),
        };
    }
    g
}

fn run_record(bundle: &ModelBundle, record: &EvalRecord, index: usize, config: &BenchConfig) -> RecordResult {
    let t = Instant::now();
    let ids = bundle.tokenizer.encode(&record.prompt);
    let tokenize_seconds = t.elapsed().as_secs_f64();
    let generation = record_generation(&config.generation, index);
    let reference = reference_answer(record);
    let arm = |steps: Option<&SlotConfig>| match run_arm(&bundle.checkpoint, &ids, steps, &generation, bundle.eos_id())
    {
        Ok((out, trace, delta_norm, warning, timing)) => {
            let output = bundle.tokenizer.decode_lossy(&out.tokens);
            let answer = extract_answer(&output, &record.extraction);
            ArmOutcome::Completed(RunMetrics {
                correct: answer.as_deref() == Some(reference.as_str()),
                answer,
                output,
                new_tokens: out.tokens.len(),
                output_ids: out.tokens,
                stop: out.stop,
                prompt_tokens: ids.len(),
                loss_trace: trace,
                delta_norm,
                warning,
                timing,
            })
        }
        Err(e) => ArmOutcome::Failed { error: e.to_string() },
    };
    let baseline = (config.arms != Arms::SlotOnly).then(|| arm(None));
    let slot = (config.arms != Arms::BaselineOnly).then(|| arm(Some(&config.slot)));
    RecordResult {
        id: record.id.clone(),
        reference_answer: reference.clone(),
        prompt_tokens: ids.len(),
        baseline,
        slot,
        timing: RecordTiming { tokenize_seconds },
    }
}

type ArmRun = (GenerationOutput, Vec<f64>, f64, Option<String>, PhaseTiming);

/// One timed prompt stage plus generation. `slot = None` is the plain model
/// with no loss evaluation at all.
pub(crate) fn run_arm(
    ckpt: &Checkpoint,
    ids: &[TokenId],
    slot: Option<&SlotConfig>,
    generation: &GenerationConfig,
    eos: Option<TokenId>,
) -> Result<ArmRun, SlotError> {
    let t = Instant::now();
    let (out, trace, norm, warning, prompt_seconds, generate_seconds) = match slot {
        None => {
            let p = prefill(ckpt, ids)?;
            let prompt_seconds = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let out = generate_from_prefill(ckpt, p, None, generation, eos)?;
            (out, Vec::new(), 0.0, None, prompt_seconds, t.elapsed().as_secs_f64())
        }
        Some(cfg) => {
            let sample = optimize_delta(ckpt, ids, cfg)?;
            let prompt_seconds = t.elapsed().as_secs_f64();
            let (trace, norm, warning) = (sample.loss_trace.clone(), sample.delta.norm(), sample.warning.clone());
            let t = Instant::now();
            let out = crate::slot::generate(ckpt, sample, generation, eos)?;
            (out, trace, norm, warning, prompt_seconds, t.elapsed().as_secs_f64())
        }
    };
    let timing = PhaseTiming::new(ids.len(), out.tokens.len(), prompt_seconds, generate_seconds);
    Ok((out, trace, norm, warning, timing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic::tiny_bundle;

    fn records() -> Vec<EvalRecord> {
        super::super::parse_dataset(
            r#####"{"id": "1", "prompt": "A farmer has 12 cows", "reference": "#### 7", "extraction": "last-number"}
{"id": "2", "prompt": "She reads 20 pages", "reference": "#### 3", "extraction": "last-number"}
{"id": "3", "prompt": "The quick brown fox", "reference": "dog", "extraction": "exact"}"#####,
        )
        .unwrap()
    }

    fn config(steps: usize) -> BenchConfig {
        BenchConfig {
            slot: SlotConfig::with_steps(steps),
            generation: GenerationConfig::greedy(6),
            workers: 2,
            arms: Arms::Both,
        }
    }

    #[test]
    fn zero_steps_reproduce_baseline_outputs() {
        let bundle = tiny_bundle(16, 2, 2, 4);
        let report = run_benchmark(&bundle, &records(), &config(0)).unwrap();
        for r in &report.results {
            let b = r.baseline.as_ref().unwrap().metrics().unwrap();
            let s = r.slot.as_ref().unwrap().metrics().unwrap();
            assert_eq!(b.output_ids, s.output_ids);
            assert!(s.loss_trace.is_empty());
        }
        assert_eq!(report.accuracy_gain_points, Some(0.0));
    }

    #[test]
    fn self_consistent_references_score_full_marks() {
        let bundle = tiny_bundle(16, 2, 2, 4);
        let mut recs = records();
        let probe = run_benchmark(
            &bundle,
            &recs,
            &BenchConfig {
                arms: Arms::BaselineOnly,
                ..config(0)
            },
        )
        .unwrap();
        for (rec, res) in recs.iter_mut().zip(&probe.results) {
            rec.reference = res.baseline.as_ref().unwrap().metrics().unwrap().output.clone();
            rec.extraction = super::super::ExtractionRule::Exact;
        }
        let report = run_benchmark(
            &bundle,
            &recs,
            &BenchConfig {
                arms: Arms::BaselineOnly,
                ..config(0)
            },
        )
        .unwrap();
        let b = report.baseline.unwrap();
        assert_eq!((b.correct, b.accuracy), (3, 1.0));
        assert!(report.slot.is_none());
    }

    #[test]
    fn failures_are_isolated_and_counted() {
        let bundle = tiny_bundle(16, 1, 2, 4);
        let mut recs = records();
        // Longer than the context window.
        recs[1].prompt = "the ".repeat(400);
        let report = run_benchmark(&bundle, &recs, &config(2)).unwrap();
        assert_eq!(report.failed_records, 1);
        assert!(matches!(report.results[1].slot, Some(ArmOutcome::Failed { .. })));
        let s = report.slot.unwrap();
        assert_eq!((s.records, s.completed, s.failed), (3, 2, 1));
        assert!(
            report.results[0]
                .slot
                .as_ref()
                .unwrap()
                .metrics()
                .unwrap()
                .loss_trace
                .len()
                == 3
        );
    }

    #[test]
    fn accuracy_in_bounds_and_worker_count_irrelevant() {
        let bundle = tiny_bundle(16, 2, 2, 4);
        let one = run_benchmark(
            &bundle,
            &records(),
            &BenchConfig {
                workers: 1,
                ..config(3)
            },
        )
        .unwrap();
        let three = run_benchmark(
            &bundle,
            &records(),
            &BenchConfig {
                workers: 3,
                ..config(3)
            },
        )
        .unwrap();
        for (a, b) in one.results.iter().zip(&three.results) {
            assert_eq!(
                a.slot.as_ref().unwrap().metrics().unwrap().output_ids,
                b.slot.as_ref().unwrap().metrics().unwrap().output_ids
            );
        }
        let s = one.slot.unwrap();
        assert!((0.0..=1.0).contains(&s.accuracy));
        let correct = one
            .results
            .iter()
            .filter(|r| r.slot.as_ref().unwrap().metrics().unwrap().correct)
            .count();
        assert_eq!(s.correct, correct);
    }
}
