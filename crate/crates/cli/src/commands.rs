use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use slot_core::harness::{
    load_dataset, measure_overhead, run_benchmark, run_sweep, BenchConfig, EvalRecord, OverheadConfig, SweepConfig,
};
use slot_core::lmv::{compute_lmv, mean_lmv, rank_tokens, LmvReport, TokenShift};
use slot_core::model::synthetic::{gpt2_small_bundle, tiny_bundle};
use slot_core::slot::{generate, optimize_delta, run_batch, AdaptedRecord, StopReason};
use slot_core::{ModelBundle, SlotError, TokenId};

use crate::args::{
    AdaptArgs, BenchArgs, DataArgs, Format, InitArgs, LmvArgs, ModelArgs, OutputArgs, OverheadArgs, Preset, SweepArgs,
};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub const CONFIG: u8 = 1;
    pub const LOAD: u8 = 2;
    pub const PARTIAL: u8 = 3;

    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: Self::CONFIG,
            error: error.into(),
        }
    }

    fn load(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: Self::LOAD,
            error: error.into(),
        }
    }
}

/// Configuration problems are the caller's fault; anything else that stops a
/// whole run counts as a failed run.
fn classify(e: SlotError) -> Failure {
    match e {
        SlotError::InvalidConfig(_) | SlotError::PromptTooShort { .. } => Failure::config(e),
        SlotError::Model(_) => Failure::config(e),
        other => Failure {
            code: Failure::PARTIAL,
            error: other.into(),
        },
    }
}

type Outcome = Result<u8, Failure>;

fn load_model(args: &ModelArgs) -> Result<ModelBundle, Failure> {
    let dir = &args.model_dir;
    log::info!("loading model from {}", dir.display());
    ModelBundle::load_dir(dir)
        .with_context(|| format!("loading model from {}", dir.display()))
        .map_err(Failure::load)
}

fn load_records(args: &DataArgs) -> Result<Vec<EvalRecord>, Failure> {
    let mut records = load_dataset(&args.dataset)
        .with_context(|| format!("loading dataset {}", args.dataset.display()))
        .map_err(Failure::load)?;
    if let Some(n) = args.limit {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(Failure::config(anyhow!(
            "dataset {} has no records",
            args.dataset.display()
        )));
    }
    Ok(records)
}

fn emit(output: &OutputArgs, body: String) -> Result<(), Failure> {
    match &output.report {
        Some(path) => fs::write(path, body)
            .with_context(|| format!("writing report to {}", path.display()))
            .map_err(|e| Failure {
                code: Failure::PARTIAL,
                error: e,
            }),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn csv_result(r: Result<String, impl std::error::Error + Send + Sync + 'static>) -> Result<String, Failure> {
    r.map_err(|e| Failure {
        code: Failure::PARTIAL,
        error: e.into(),
    })
}

fn worker_count(n: usize) -> Result<usize, Failure> {
    if n == 0 {
        return Err(Failure::config(anyhow!("--workers must be at least 1")));
    }
    Ok(n)
}

#[derive(Serialize)]
struct Generated {
    text: String,
    ids: Vec<TokenId>,
    stop: StopReason,
}

/// Ranking without the vocabulary-sized vector.
#[derive(Serialize)]
struct LmvSummary {
    label: String,
    norm: f64,
    top_increased: Vec<TokenShift>,
    top_decreased: Vec<TokenShift>,
    eos_rank_in_decreased: Option<usize>,
}

impl From<&LmvReport> for LmvSummary {
    fn from(r: &LmvReport) -> Self {
        Self {
            label: r.label.clone(),
            norm: r.lmv.iter().map(|x| x * x).sum::<f64>().sqrt(),
            top_increased: r.top_increased.clone(),
            top_decreased: r.top_decreased.clone(),
            eos_rank_in_decreased: r.eos_rank_in_decreased,
        }
    }
}

#[derive(Serialize)]
struct AdaptReport {
    sample: AdaptedRecord,
    generated: Generated,
    lmv: LmvSummary,
}

pub fn adapt(args: AdaptArgs) -> Outcome {
    let slot = args.slot.config();
    slot.validate().map_err(Failure::config)?;
    let prompt = match (&args.prompt, &args.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => fs::read_to_string(path)
            .with_context(|| format!("reading prompt from {}", path.display()))
            .map_err(Failure::load)?,
        (None, None) => return Err(Failure::config(anyhow!("no prompt given"))),
    };
    let bundle = load_model(&args.model)?;
    let ckpt = &bundle.checkpoint;
    let ids = bundle.tokenizer.encode(&prompt);
    let sample = optimize_delta(ckpt, &ids, &slot).map_err(classify)?;
    if let Some(w) = &sample.warning {
        log::warn!("{w}");
    }
    let record = sample.to_record();
    let lmv = compute_lmv(ckpt, &sample.delta).map_err(classify)?;
    let report = rank_tokens("prompt", lmv, &bundle.tokenizer, bundle.eos_id(), args.top_k).map_err(Failure::config)?;
    let out = generate(ckpt, sample, &args.generation.config(128), bundle.eos_id()).map_err(classify)?;
    let generated = Generated {
        text: bundle.tokenizer.decode_lossy(&out.tokens),
        ids: out.tokens,
        stop: out.stop,
    };

    let body = match args.output.format {
        Format::Json => json(&AdaptReport {
            sample: record,
            generated,
            lmv: LmvSummary::from(&report),
        }),
        Format::Csv => csv_result(report.to_csv(&bundle.tokenizer))?,
        Format::Text => {
            let trace: Vec<String> = record.loss_trace.iter().map(|l| format!("{l:.6}")).collect();
            format!(
                "prompt tokens: {}\nloss trace: [{}]\ndelta norm: {:.6e}\n\n{}\n{}\n",
                record.prompt_ids.len(),
                trace.join(", "),
                record.delta.norm(),
                generated.text,
                report.to_text()
            )
        }
    };
    emit(&args.output, body)?;
    Ok(0)
}

pub fn bench(args: BenchArgs) -> Outcome {
    let config = BenchConfig {
        slot: args.slot.config(),
        generation: args.generation.config(128),
        workers: worker_count(args.workers)?,
        arms: args.arms.into(),
    };
    config.slot.validate().map_err(Failure::config)?;
    let bundle = load_model(&args.model)?;
    let records = load_records(&args.data)?;
    let report = run_benchmark(&bundle, &records, &config).map_err(classify)?;
    let body = match args.output.format {
        Format::Json => json(&report),
        Format::Csv => csv_result(report.to_csv())?,
        Format::Text => report.to_text(),
    };
    emit(&args.output, body)?;
    Ok(if report.failed_records > 0 { Failure::PARTIAL } else { 0 })
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let base = BenchConfig {
        slot: args.slot.config(),
        generation: args.generation.config(128),
        workers: worker_count(args.workers)?,
        arms: slot_core::harness::Arms::SlotOnly,
    };
    let grid = SweepConfig {
        steps_grid: args.steps_grid,
        lr_grid: args.lr_grid,
        seeds: args.seeds,
    };
    base.slot.validate().map_err(Failure::config)?;
    grid.validate().map_err(Failure::config)?;
    let bundle = load_model(&args.model)?;
    let records = load_records(&args.data)?;
    let report = run_sweep(&bundle, &records, &grid, &base).map_err(classify)?;
    let body = match args.output.format {
        Format::Json => json(&report),
        Format::Csv => csv_result(report.to_csv())?,
        Format::Text => report.to_text(),
    };
    emit(&args.output, body)?;
    let partial = report.cells.iter().any(|c| c.error.is_some() || c.failed_records > 0);
    Ok(if partial { Failure::PARTIAL } else { 0 })
}

pub fn overhead(args: OverheadArgs) -> Outcome {
    let config = OverheadConfig {
        steps_list: args.steps_list,
        repetitions: args.repetitions,
        warmup: !args.no_warmup,
        slot: args.slot.config(),
        generation: args.generation.config(32),
    };
    if config.repetitions == 0 {
        return Err(Failure::config(anyhow!("--repetitions must be at least 1")));
    }
    config.slot.validate().map_err(Failure::config)?;
    let bundle = load_model(&args.model)?;
    let records = load_records(&args.data)?;
    let prompts: Vec<Vec<TokenId>> = records.iter().map(|r| bundle.tokenizer.encode(&r.prompt)).collect();
    let report = measure_overhead(&bundle.checkpoint, &prompts, bundle.eos_id(), &config).map_err(classify)?;
    let body = match args.output.format {
        Format::Json => json(&report),
        Format::Csv => csv_result(report.to_csv())?,
        Format::Text => report.to_text(),
    };
    emit(&args.output, body)?;
    Ok(0)
}

#[derive(Serialize)]
struct SampleLmv {
    id: String,
    #[serde(flatten)]
    summary: LmvSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    lmv: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct LmvOutput {
    steps: usize,
    samples: Vec<SampleLmv>,
    failed: Vec<FailedSample>,
    mean: LmvSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_lmv: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct FailedSample {
    id: String,
    error: String,
}

pub fn lmv(args: LmvArgs) -> Outcome {
    let slot = args.slot.config();
    slot.validate().map_err(Failure::config)?;
    let workers = worker_count(args.workers)?;
    let bundle = load_model(&args.model)?;
    let records = load_records(&args.data)?;
    let ckpt = &bundle.checkpoint;
    let (tok, eos, k) = (&bundle.tokenizer, bundle.eos_id(), args.top_k);
    let prompts: Vec<Vec<TokenId>> = records.iter().map(|r| tok.encode(&r.prompt)).collect();

    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (record, result) in records
        .iter()
        .zip(run_batch(ckpt, &prompts, &slot, workers).map_err(classify)?)
    {
        match result.and_then(|s| compute_lmv(ckpt, &s.delta)) {
            Ok(v) => {
                let r = rank_tokens(format!("sample {}", record.id), v, tok, eos, k).map_err(Failure::config)?;
                reports.push((record.id.clone(), r));
            }
            Err(e) => {
                log::warn!("{}: {e}", record.id);
                failed.push(FailedSample {
                    id: record.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if reports.is_empty() {
        return Err(Failure {
            code: Failure::PARTIAL,
            error: anyhow!("every sample failed"),
        });
    }
    let vectors: Vec<Vec<f64>> = reports.iter().map(|(_, r)| r.lmv.clone()).collect();
    let mean = mean_lmv(&vectors).map_err(classify)?;
    let label = format!("mean over {} samples", reports.len());
    let mean = rank_tokens(label, mean, tok, eos, k).map_err(Failure::config)?;

    let partial = !failed.is_empty();
    let body = match args.output.format {
        Format::Json => json(&LmvOutput {
            steps: slot.steps,
            samples: reports
                .iter()
                .map(|(id, r)| SampleLmv {
                    id: id.clone(),
                    summary: LmvSummary::from(r),
                    lmv: args.full_vectors.then(|| r.lmv.clone()),
                })
                .collect(),
            failed,
            mean: LmvSummary::from(&mean),
            mean_lmv: args.full_vectors.then(|| mean.lmv.clone()),
        }),
        Format::Csv => csv_result(mean.to_csv(tok))?,
        Format::Text => {
            let mut out = mean.to_text();
            for (_, r) in &reports {
                out.push('\n');
                out.push_str(&r.to_text());
            }
            out
        }
    };
    emit(&args.output, body)?;
    Ok(if partial { Failure::PARTIAL } else { 0 })
}

pub fn init_synthetic(args: InitArgs) -> Outcome {
    let bundle = match args.preset {
        Preset::Gpt2Small => gpt2_small_bundle(args.seed),
        Preset::Tiny => tiny_bundle(16, 2, 2, args.seed),
    };
    save(&bundle, &args.out)?;
    eprintln!("wrote {} ({})", args.out.display(), bundle.checkpoint.fingerprint());
    Ok(0)
}

fn save(bundle: &ModelBundle, dir: &Path) -> Result<(), Failure> {
    bundle
        .save_dir(dir)
        .with_context(|| format!("writing model to {}", dir.display()))
        .map_err(|e| Failure {
            code: Failure::PARTIAL,
            error: e,
        })
}
