use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use derm_core::autograd::OpKind;
use derm_core::data::{blob_dataset, stratified_split, ImageSample, NormalizationStats};
use derm_core::gradcheck::{layer_suite, SuiteRow};
use derm_core::metrics::MetricsReport;
use derm_core::models::{predict as predict_logits, Model, Prediction};
use derm_core::train::{preprocess_eval, stack_batch, EpochRecord, Trainer};
use derm_core::{Scalar, Tensor};
use serde::Serialize;

use crate::ckpt::SavedModel;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{atomic_write, load_samples, read_image, read_manifest, write_image, write_manifest, ManifestRow};
use crate::report::{log_jsonl, write_json, write_report};

/// Scalar type for training and inference.
#[cfg(not(feature = "f64"))]
pub type Float = f32;
#[cfg(feature = "f64")]
pub type Float = f64;

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];
const EVAL_BATCH: usize = 32;

/// Worker threads for evaluation: one in deterministic mode, otherwise
/// `DERM_THREADS` or the available parallelism.
pub fn worker_count(deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    std::env::var("DERM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Sigmoid probabilities in input order. Batches are independent pure
/// forward passes, so the result does not depend on `threads`.
pub fn probabilities<T: Scalar + Send + Sync>(
    model: &Model<T>,
    inputs: &[Tensor<f32>],
    batch: usize,
    threads: usize,
) -> CliResult<Vec<Prediction>> {
    let chunks: Vec<&[Tensor<f32>]> = inputs.chunks(batch.max(1)).collect();
    let run = |chunk: &[Tensor<f32>]| -> CliResult<Vec<Prediction>> {
        let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
        let logits = model.logits(&stack_batch::<T>(&refs)?)?;
        Ok(predict_logits(logits.data(), 0.5))
    };
    let threads = threads.clamp(1, chunks.len().max(1));
    let per_chunk: Vec<CliResult<Vec<Prediction>>> = if threads == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let mut slots: Vec<Option<CliResult<Vec<Prediction>>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            for (w, group) in slots.chunks_mut(chunks.len().div_ceil(threads)).enumerate() {
                let start = w * chunks.len().div_ceil(threads);
                let (chunks, run) = (&chunks, &run);
                s.spawn(move || {
                    for (k, slot) in group.iter_mut().enumerate() {
                        *slot = Some(run(chunks[start + k]));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.unwrap()).collect()
    };
    let mut out = Vec::with_capacity(inputs.len());
    for r in per_chunk {
        out.extend(r?);
    }
    Ok(out)
}

pub fn evaluate_samples<T: Scalar + Send + Sync>(
    model: &Model<T>,
    samples: &[ImageSample],
    stats: &NormalizationStats,
    threads: usize,
) -> CliResult<MetricsReport> {
    let size = model.config.image_size;
    let inputs = samples
        .iter()
        .map(|s| preprocess_eval(&s.image, size, stats))
        .collect::<derm_core::Result<Vec<_>>>()?;
    let preds = probabilities(model, &inputs, EVAL_BATCH, threads)?;
    let probs: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let hard: Vec<u8> = preds.iter().map(|p| p.label).collect();
    Ok(MetricsReport::new(&probs, &hard, &labels)?)
}

#[derive(Debug, Serialize)]
struct SplitPart {
    rows: usize,
    non_malignant: usize,
    malignant: usize,
    /// Row indices into the source manifest (0-based, header excluded).
    indices: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct SplitJson {
    manifest: String,
    seed: u64,
    ratios: [f64; 3],
    train: SplitPart,
    val: SplitPart,
    test: SplitPart,
}

pub const SPLIT_FILES: [&str; 3] = ["train.csv", "val.csv", "test.csv"];

/// Writes `train.csv`, `val.csv`, `test.csv` and `split.json` to `out_dir`.
pub fn split(manifest: &Path, out_dir: &Path, seed: u64, ratios: [f64; 3]) -> CliResult<[usize; 3]> {
    let rows = read_manifest(manifest)?;
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let s = stratified_split(&labels, ratios, seed)?;
    let part = |idx: &[usize]| {
        let malignant = idx.iter().filter(|&&i| labels[i] == 1).count();
        SplitPart {
            rows: idx.len(),
            non_malignant: idx.len() - malignant,
            malignant,
            indices: idx.to_vec(),
        }
    };
    for (name, idx) in SPLIT_FILES.iter().zip(s.parts()) {
        write_manifest(&out_dir.join(name), idx.iter().map(|&i| &rows[i]))?;
    }
    write_json(
        &out_dir.join("split.json"),
        &SplitJson {
            manifest: manifest.display().to_string(),
            seed,
            ratios,
            train: part(&s.train),
            val: part(&s.val),
            test: part(&s.test),
        },
    )?;
    Ok([s.train.len(), s.val.len(), s.test.len()])
}

fn read_split(cfg: &RunConfig, name: &str) -> CliResult<Vec<ImageSample>> {
    let rows = read_manifest(&cfg.data.split_dir.join(name))?;
    load_samples(&rows, &cfg.data.data_root)
}

pub struct TrainSummary {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

/// Trains on the split files named by the config and writes `best.ckpt`,
/// `log.jsonl`, and the best checkpoint's test-set `metrics.json` and
/// `confusion.csv`.
pub fn train(config: &Path, out_dir: &Path, progress: bool) -> CliResult<TrainSummary> {
    let cfg = RunConfig::load(config)?;
    let train_set = read_split(&cfg, SPLIT_FILES[0])?;
    let val_set = read_split(&cfg, SPLIT_FILES[1])?;
    let test_set = read_split(&cfg, SPLIT_FILES[2])?;
    let model = Model::<Float>::new(&cfg.model, cfg.train.seed)?;
    let stats = cfg.data.stats;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.augment.clone(), stats, &train_set, &val_set)?;
    let log_path = out_dir.join("log.jsonl");
    for _ in 0..cfg.train.epochs {
        let r = trainer.run_epoch()?;
        if progress {
            eprintln!(
                "epoch {:>3}  lr {:.3e}  train_loss {:.5}  val_loss {:.5}  val_acc {:.4}  val_f1 {:.4}",
                r.epoch, r.lr, r.train_loss, r.val_loss, r.val_accuracy, r.val_f1
            );
        }
        atomic_write(&log_path, log_jsonl(trainer.log())?.as_bytes())?;
    }
    let outcome = trainer.finish()?;
    let saved = SavedModel::from_snapshot(&cfg.model, &stats, &cfg.train, &outcome.best);
    saved.save(&out_dir.join("best.ckpt"))?;
    let mut best = outcome.model;
    best.params = outcome.best.params.clone();
    let test = evaluate_samples(&best, &test_set, &stats, worker_count(cfg.train.deterministic))?;
    write_report(out_dir, &test, None)?;
    Ok(TrainSummary {
        log: outcome.log,
        best_epoch: outcome.best.epoch,
        test,
    })
}

/// Evaluates a checkpoint on a manifest; writes `metrics.json` and
/// `confusion.csv` to `out_dir`.
pub fn eval(checkpoint: &Path, manifest: &Path, data_root: &Path, out_dir: &Path) -> CliResult<MetricsReport> {
    let saved = SavedModel::load(checkpoint)?;
    let model = saved.build::<Float>()?;
    let rows = read_manifest(manifest)?;
    let samples = load_samples(&rows, data_root)?;
    let report = evaluate_samples(&model, &samples, &saved.stats, worker_count(saved.train.deterministic))?;
    write_report(out_dir, &report, None)?;
    Ok(report)
}

pub fn predict(checkpoint: &Path, image: &Path) -> CliResult<Prediction> {
    let saved = SavedModel::load(checkpoint)?;
    let model = saved.build::<Float>()?;
    let img = read_image(image)?;
    let x = preprocess_eval(&img, model.config.image_size, &saved.stats)?;
    Ok(probabilities(&model, &[x], 1, 1)?[0])
}

pub fn prediction_line(p: &Prediction) -> String {
    let name = if p.label == 1 { "malignant" } else { "non-malignant" };
    format!("{name} {:.6}", p.probability)
}

const FAULTABLE: &[(&str, OpKind)] = &[
    ("matmul", OpKind::MatMul),
    ("bmm", OpKind::BatchMatMul),
    ("linear", OpKind::Linear),
    ("conv2d", OpKind::Conv2d),
    ("max_pool2", OpKind::MaxPool2),
    ("relu", OpKind::Relu),
    ("sigmoid", OpKind::Sigmoid),
    ("silu", OpKind::Silu),
    ("add", OpKind::Add),
    ("mul", OpKind::Mul),
    ("softmax", OpKind::Softmax),
    ("layer_norm", OpKind::LayerNorm),
    ("concat", OpKind::Concat),
    ("bspline", OpKind::BSpline),
    ("weighted_bce", OpKind::WeightedBce),
];

/// Parses `op:scale`, e.g. `softmax:1.1`: that op's backward output is
/// multiplied by `scale`.
pub fn parse_fault(s: &str) -> CliResult<(OpKind, f64)> {
    let (op, scale) = s
        .split_once(':')
        .ok_or_else(|| CliError::config(format!("fault must look like op:scale, got {s:?}")))?;
    let kind = FAULTABLE
        .iter()
        .find(|(n, _)| *n == op)
        .map(|&(_, k)| k)
        .ok_or_else(|| CliError::config(format!("unknown op {op:?}")))?;
    let scale = scale
        .parse()
        .map_err(|_| CliError::config(format!("bad fault scale {scale:?}")))?;
    Ok((kind, scale))
}

pub fn gradcheck_table(rows: &[SuiteRow]) -> String {
    let mut s = format!("{:<24} {:>13} {:>11}  status\n", "layer", "max_rel_error", "coordinates");
    for r in rows {
        let status = if r.passes() {
            "ok"
        } else if !r.check.admissible() {
            "FAIL (no resolvable point)"
        } else {
            "FAIL"
        };
        let _ = writeln!(
            s,
            "{:<24} {:>13.3e} {:>11}  {status}",
            r.name, r.check.max_rel_error, r.check.coordinates
        );
    }
    s
}

/// Runs the layer suite; the table is returned together with the verdict.
pub fn gradcheck(seed: u64, fault: Option<(OpKind, f64)>) -> CliResult<(String, CliResult<()>)> {
    let rows = layer_suite(seed, fault)?;
    let table = gradcheck_table(&rows);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passes()).map(|r| r.name).collect();
    let verdict = if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(format!("{} exceeded tolerance", failed.join(", "))))
    };
    Ok((table, verdict))
}

/// Writes a separable toy dataset (`images/*.ppm` plus `manifest.csv`).
pub fn synth(out_dir: &Path, count: usize, size: usize, seed: u64) -> CliResult<PathBuf> {
    if count < 2 || size < 2 {
        return Err(CliError::config("synth needs at least 2 images of at least 2x2 pixels"));
    }
    let mut rows = Vec::with_capacity(count);
    for s in blob_dataset(count, size, seed) {
        let rel = format!("images/{}.ppm", s.id);
        write_image(&out_dir.join(&rel), &s.image)?;
        rows.push(ManifestRow {
            image_path: rel,
            raw_label: s.label.to_string(),
            label: s.label,
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}
