use alloc::format;
use alloc::vec::Vec;

use super::loss::{class_weights, weighted_bce, ClassWeights};
use super::optim::{step_lr, Adam, AdamConfig};
use crate::autograd::Graph;
use crate::data::{augment_sample, make_batches, normalize, resize_bilinear, AugmentationConfig, Image, ImageSample, NormalizationStats};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::models::{predict, Model};
use crate::nn::{Mode, ParamSet};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

const DROPOUT_STREAM: u64 = 0xD809;

/// Which F1 picks the best epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectMetric {
    /// Support-weighted F1 over both classes.
    #[default]
    WeightedF1,
    /// F1 with malignant as the positive class.
    MalignantF1,
}

impl SelectMetric {
    pub fn name(self) -> &'static str {
        match self {
            SelectMetric::WeightedF1 => "weighted_f1",
            SelectMetric::MalignantF1 => "malignant_f1",
        }
    }

    /// `(precision, recall, f1)` under this reading.
    pub fn summary(self, r: &MetricsReport) -> (f64, f64, f64) {
        match self {
            SelectMetric::WeightedF1 => (r.weighted_precision, r.weighted_recall, r.weighted_f1),
            SelectMetric::MalignantF1 => (r.precision, r.recall, r.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Forces single-threaded evaluation in callers that parallelize it.
    pub deterministic: bool,
    pub select: SelectMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            base_lr: 1e-4,
            lr_step: 5,
            lr_gamma: 0.5,
            weight_decay: 1e-5,
            seed: 0,
            deterministic: true,
            select: SelectMetric::WeightedF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.lr_step == 0 {
            return Err(Error::config("lr_step must be at least 1"));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::config("lr_gamma must be in (0, 1]"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        step_lr(epoch, self.base_lr, self.lr_step, self.lr_gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    /// The F1 used for selection.
    pub val_f1: f64,
    pub report: MetricsReport,
}

/// Loss and metrics of one pass over a split in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub report: MetricsReport,
    pub probabilities: Vec<f64>,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
}

/// Parameters and optimizer state at the end of one epoch.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub epoch: usize,
    pub val_f1: f64,
    pub params: ParamSet<T>,
    pub adam: Adam<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Snapshot<T>,
    pub log: Vec<EpochRecord>,
    pub model: Model<T>,
}

/// Resize to `size×size` and normalize to `[3×size×size]`.
pub fn preprocess_eval(img: &Image, size: usize, stats: &NormalizationStats) -> Result<Tensor<f32>> {
    normalize(&resize_bilinear(img, size, size)?, stats)
}

/// Stacks `[3×S×S]` tensors into `[B×3×S×S]`.
pub fn stack_batch<T: Scalar>(items: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != shape.as_slice() {
            return Err(Error::dim("stack", &shape, t.shape()));
        }
        data.extend(t.data().iter().map(|&x| T::from_f64(x as f64)));
    }
    let mut full = alloc::vec![items.len()];
    full.extend_from_slice(&shape);
    Tensor::new(&full, data)
}

/// Drives epochs over fixed train/val splits.
pub struct Trainer<'a, T> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub augment: AugmentationConfig,
    pub stats: NormalizationStats,
    pub weights: ClassWeights,
    adam: Adam<T>,
    train: &'a [ImageSample],
    val: &'a [ImageSample],
    train_cache: Option<Vec<Tensor<f32>>>,
    val_cache: Vec<Tensor<f32>>,
    epoch: usize,
    best: Option<Snapshot<T>>,
    log: Vec<EpochRecord>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        model: Model<T>,
        config: TrainConfig,
        augment: AugmentationConfig,
        stats: NormalizationStats,
        train: &'a [ImageSample],
        val: &'a [ImageSample],
    ) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training needs nonempty train and val splits".into()));
        }
        let size = model.config.image_size;
        if augment.enabled {
            augment.validate()?;
            if augment.output_size != size {
                return Err(Error::Config(format!(
                    "augmentation output_size {} differs from image_size {size}",
                    augment.output_size
                )));
            }
        }
        let n1 = train.iter().filter(|s| s.label == 1).count() as u64;
        let weights = class_weights(train.len() as u64 - n1, n1)?;
        let adam = Adam::new(
            AdamConfig {
                weight_decay: config.weight_decay,
                ..AdamConfig::default()
            },
            &model.params,
        );
        let prep = |s: &[ImageSample]| -> Result<Vec<Tensor<f32>>> {
            s.iter().map(|x| preprocess_eval(&x.image, size, &stats)).collect()
        };
        let train_cache = if augment.enabled { None } else { Some(prep(train)?) };
        let val_cache = prep(val)?;
        Ok(Trainer {
            model,
            config,
            augment,
            stats,
            weights,
            adam,
            train,
            val,
            train_cache,
            val_cache,
            epoch: 0,
            best: None,
            log: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn best(&self) -> Option<&Snapshot<T>> {
        self.best.as_ref()
    }

    pub fn adam(&self) -> &Adam<T> {
        &self.adam
    }

    fn train_input(&self, idx: usize) -> Result<Tensor<f32>> {
        if let Some(cache) = &self.train_cache {
            return Ok(cache[idx].clone());
        }
        let s = &self.train[idx];
        let img = augment_sample(&s.image, &self.augment, self.config.seed, self.epoch as u64, idx as u64)?;
        normalize(&img, &self.stats)
    }

    /// One pass over the training split, then validation. Returns the record
    /// appended to the log.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.epoch;
        let lr = self.config.lr(epoch);
        let batches = make_batches(self.train.len(), self.config.batch_size, self.config.seed, epoch as u64, true)?;
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let inputs = idx.iter().map(|&i| self.train_input(i)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
            let x = stack_batch::<T>(&refs)?;
            let labels: Vec<u8> = idx.iter().map(|&i| self.train[i].label).collect();

            let mut g = Graph::new();
            let vars = self.model.params.bind(&mut g);
            let xv = g.constant(x);
            let mut rng = Rng::from_parts(&[self.config.seed, epoch as u64, bi as u64, DROPOUT_STREAM]);
            let logits = self.model.forward(&mut g, &vars, xv, Mode::Train, &mut rng)?;
            let probs = g.sigmoid(logits);
            let loss = weighted_bce(&mut g, probs, &labels, &self.weights)?;
            let lv = scalar_of(g.value(loss))?;
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            total += lv * idx.len() as f64;
            let mut grads = g.backward(loss)?;
            let gs = vars
                .iter()
                .zip(self.model.params.iter())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
                .collect::<Vec<_>>();
            self.adam.step(&mut self.model.params, &gs, lr).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, batch: bi },
                e => e,
            })?;
        }
        let train_loss = total / self.train.len() as f64;
        let eval = self.evaluate_cached()?;
        let (val_precision, val_recall, val_f1) = self.config.select.summary(&eval.report);
        let improved = self.best.as_ref().map_or(true, |b| val_f1 > b.val_f1);
        if improved {
            self.best = Some(Snapshot {
                epoch,
                val_f1,
                params: self.model.params.clone(),
                adam: self.adam.clone(),
            });
        }
        self.log.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss: eval.loss,
            val_accuracy: eval.report.accuracy,
            val_precision,
            val_recall,
            val_f1,
            report: eval.report,
        });
        self.epoch += 1;
        Ok(self.log.last().unwrap())
    }

    fn evaluate_cached(&self) -> Result<Evaluation> {
        let labels: Vec<u8> = self.val.iter().map(|s| s.label).collect();
        evaluate_tensors(&self.model, &self.val_cache, &labels, &self.weights, self.config.batch_size)
    }

    /// Eval-mode pass over arbitrary samples (resized, not augmented).
    pub fn evaluate(&self, samples: &[ImageSample]) -> Result<Evaluation> {
        let size = self.model.config.image_size;
        let inputs = samples
            .iter()
            .map(|s| preprocess_eval(&s.image, size, &self.stats))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        evaluate_tensors(&self.model, &inputs, &labels, &self.weights, self.config.batch_size)
    }

    pub fn finish(self) -> Result<TrainOutcome<T>> {
        let best = self.best.ok_or_else(|| Error::Data("no epoch has run".into()))?;
        Ok(TrainOutcome {
            best,
            log: self.log,
            model: self.model,
        })
    }
}

/// Eval-mode loss and metrics over preprocessed inputs.
pub fn evaluate_tensors<T: Scalar>(
    model: &Model<T>,
    inputs: &[Tensor<f32>],
    labels: &[u8],
    weights: &ClassWeights,
    batch_size: usize,
) -> Result<Evaluation> {
    if inputs.len() != labels.len() {
        return Err(Error::Data("inputs and labels differ in length".into()));
    }
    let mut probabilities = Vec::with_capacity(inputs.len());
    let mut predictions = Vec::with_capacity(inputs.len());
    let mut total = 0.0;
    for (chunk, ys) in inputs.chunks(batch_size.max(1)).zip(labels.chunks(batch_size.max(1))) {
        let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
        let x = stack_batch::<T>(&refs)?;
        let mut g = Graph::new();
        let vars = model.params.bind_frozen(&mut g);
        let xv = g.constant(x);
        let mut rng = Rng::new(0);
        let logits = model.forward(&mut g, &vars, xv, Mode::Eval, &mut rng)?;
        let probs = g.sigmoid(logits);
        let loss = weighted_bce(&mut g, probs, ys, weights)?;
        total += scalar_of(g.value(loss))? * ys.len() as f64;
        for p in predict(g.value(logits).data(), 0.5) {
            probabilities.push(p.probability);
            predictions.push(p.label);
        }
    }
    let report = MetricsReport::new(&probabilities, &predictions, labels)?;
    Ok(Evaluation {
        loss: total / labels.len().max(1) as f64,
        report,
        probabilities,
        predictions,
        labels: labels.to_vec(),
    })
}

/// Runs every configured epoch and keeps the best-validated snapshot.
pub fn train<T: Scalar>(
    model: Model<T>,
    train: &[ImageSample],
    val: &[ImageSample],
    config: &TrainConfig,
    augment: &AugmentationConfig,
    stats: &NormalizationStats,
) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::new(model, config.clone(), augment.clone(), *stats, train, val)?;
    for _ in 0..config.epochs {
        t.run_epoch()?;
    }
    t.finish()
}

fn scalar_of<T: Scalar>(t: &Tensor<T>) -> Result<f64> {
    t.item()
        .map(Scalar::to_f64)
        .ok_or_else(|| Error::NonScalarLoss(t.shape().to_vec()))
}
