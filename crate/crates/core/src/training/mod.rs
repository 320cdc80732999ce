//! Mini-batch training with Adam and categorical cross-entropy, plus
//! evaluation into a confusion matrix and derived metrics.

mod metrics;
mod metrics_file;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::classifier::{
    batch_tensor, load_pretrained, predict_batch, DenseNetConfig, ModelError, TrainedModel,
    TrainingMetadata,
};
use crate::dataset::{
    indexed_split, load_sample, validate_manifest, DatasetError, DatasetManifest, ImageTensor,
    PreprocessConfig, SampleEntry, Split,
};
use crate::label::NUM_CLASSES;

pub use metrics::{
    confusion_matrix, confusion_matrix_k, cross_entropy_loss, metrics_from_confusion, AveragedMetrics,
    Averaging, ClassMetrics, ConfusionMatrix, EvaluationMetrics, MetricsError, PROBABILITY_FLOOR,
};
pub use metrics_file::{parse_metrics_file, write_metrics_file, MetricsFile, METRICS_MAGIC};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset split {0} is empty")]
    EmptyDataset(Split),
    #[error("manifest failed validation: {0}")]
    InvalidManifest(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f32 },
    #[error("checkpoint write to {path} failed: {message}")]
    DiskError { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<candle_core::Error> for TrainError {
    fn from(e: candle_core::Error) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "Adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "Cross-Entropy")]
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "Cross-Entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without improvement in the selection loss.
    pub patience: Option<usize>,
    /// Where to write the best checkpoint as training progresses.
    pub checkpoint_dir: Option<PathBuf>,
    /// Weight the loss by inverse class frequency.
    pub class_weighting: bool,
    /// Safetensors file whose matching parameters seed the trunk.
    pub pretrained: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            loss: LossKind::CrossEntropy,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            patience: None,
            checkpoint_dir: None,
            class_weighting: false,
            pretrained: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn load_images(entries: &[(&SampleEntry, usize)], cfg: &PreprocessConfig) -> Result<Vec<ImageTensor>, DatasetError> {
    entries
        .par_iter()
        .map(|(entry, _)| load_sample(entry, cfg))
        .collect()
}

/// Splits `n` shuffled positions into batches, folding a trailing single
/// sample into the previous batch (batch statistics need two samples).
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges: Vec<_> = (0..n)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if ranges.len() > 1 && ranges.last().map(|r| r.len()) == Some(1) {
        let last = ranges.pop().expect("non-empty");
        ranges.last_mut().expect("non-empty").end = last.end;
    }
    ranges
}

fn argmax_rows(probs: &[Vec<f32>]) -> Vec<usize> {
    probs
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Trains a fresh model on the manifest's train split and returns the
/// checkpoint with the lowest validation loss (training loss when there is no
/// validation split) together with the per-epoch history.
pub fn train(
    config: &DenseNetConfig,
    preprocess: &PreprocessConfig,
    manifest: &DatasetManifest,
    tcfg: &TrainingConfig,
) -> Result<(TrainedModel, TrainingHistory), TrainError> {
    tcfg.validate()?;
    let report = validate_manifest(manifest);
    if !report.passed() {
        let mut problems = Vec::new();
        if let Some((p, l)) = report.unknown_labels.first() {
            problems.push(format!("unknown label {l} ({})", p.display()));
        }
        if let Some(p) = report.missing_files.first() {
            problems.push(format!("missing file {}", p.display()));
        }
        if let Some(p) = report.duplicates.first() {
            problems.push(format!("duplicate path {}", p.display()));
        }
        return Err(TrainError::InvalidManifest(problems.join("; ")));
    }
    let train_set = indexed_split(manifest, Split::Train)
        .map_err(|l| TrainError::InvalidManifest(format!("unknown label {l}")))?;
    let val_set = indexed_split(manifest, Split::Val)
        .map_err(|l| TrainError::InvalidManifest(format!("unknown label {l}")))?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset(Split::Train));
    }

    let model = TrainedModel::initialize(config.clone(), preprocess.clone(), tcfg.seed)?;
    if let Some(path) = &tcfg.pretrained {
        let loaded = load_pretrained(model.varmap(), path)?;
        info!(loaded, path = %path.display(), "initialized parameters from pretrained weights");
    }

    let class_weights = tcfg.class_weighting.then(|| {
        let mut counts = [0usize; NUM_CLASSES];
        for (_, c) in &train_set {
            counts[*c] += 1;
        }
        let n = train_set.len() as f32;
        let present = counts.iter().filter(|&&c| c > 0).count() as f32;
        let w: Vec<f32> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { n / (present * c as f32) })
            .collect();
        Tensor::from_vec(w, NUM_CLASSES, &Device::Cpu)
    });
    let class_weights = class_weights.transpose()?;

    let trainable = {
        let data = model.varmap().data().lock().expect("varmap lock poisoned");
        let mut named: Vec<_> = data
            .iter()
            .filter(|(name, _)| !name.contains("running_"))
            .map(|(name, var)| (name.clone(), var.clone()))
            .collect();
        named.sort_by(|a, b| a.0.cmp(&b.0));
        named.into_iter().map(|(_, v)| v).collect::<Vec<_>>()
    };
    let mut optimizer = AdamW::new(
        trainable,
        ParamsAdamW {
            lr: tcfg.learning_rate,
            beta1: tcfg.adam_beta1,
            beta2: tcfg.adam_beta2,
            eps: tcfg.adam_epsilon,
            weight_decay: 0.0,
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, usize, HashMap<String, Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (b, range) in batch_ranges(order.len(), tcfg.batch_size).into_iter().enumerate() {
            let batch: Vec<(&SampleEntry, usize)> = order[range].iter().map(|&i| train_set[i]).collect();
            let images = load_images(&batch, preprocess)?;
            let refs: Vec<&ImageTensor> = images.iter().collect();
            let x = batch_tensor(&refs)?;
            let targets: Vec<u32> = batch.iter().map(|(_, c)| *c as u32).collect();
            let y = Tensor::from_vec(targets.clone(), batch.len(), &Device::Cpu)?;
            let logits = model.network().forward_t(&x, true)?;
            let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
            let picked = log_probs.gather(&y.unsqueeze(1)?, 1)?.squeeze(1)?.neg()?;
            let loss = match &class_weights {
                None => picked.mean_all()?,
                Some(w) => {
                    let sw = w.index_select(&y, 0)?;
                    (picked.mul(&sw)?.sum_all()? / sw.sum_all()?.to_scalar::<f32>()? as f64)?
                }
            };
            let value = loss.to_scalar::<f32>()?;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, value });
            }
            optimizer.backward_step(&loss)?;
            loss_sum += value as f64 * batch.len() as f64;
            let probs: Vec<Vec<f32>> = logits.detach().to_dtype(DType::F32)?.to_vec2()?;
            correct += argmax_rows(&probs)
                .iter()
                .zip(&targets)
                .filter(|(p, t)| **p == **t as usize)
                .count();
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_accuracy = correct as f64 / train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (loss, cm) = score_split(&model, &val_set, tcfg.batch_size.max(32))?;
            (Some(loss), Some(cm.trace() as f64 / cm.total() as f64))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        debug!(?record, "epoch finished");
        history.epochs.push(record);

        let selection = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(l, _, _)| selection < *l) {
            best = Some((selection, epoch, model.snapshot()?));
            since_best = 0;
            if let Some(dir) = &tcfg.checkpoint_dir {
                let meta = metadata(config, tcfg, epoch, epoch, val_loss, &train_set, &val_set);
                let ckpt = TrainedModel::initialize(config.clone(), preprocess.clone(), 0)?;
                ckpt.restore(&best.as_ref().expect("just set").2)?;
                ckpt.with_training(meta).save(dir).map_err(|e| TrainError::DiskError {
                    path: dir.clone(),
                    message: e.to_string(),
                })?;
            }
        } else {
            since_best += 1;
        }
        if tcfg.patience.is_some_and(|p| since_best >= p) {
            info!(epoch, "early stop: no improvement for {since_best} epochs");
            break;
        }
    }

    let (best_loss, best_epoch, snapshot) = best.expect("at least one epoch ran");
    model.restore(&snapshot)?;
    let completed = history.epochs.len();
    let best_val = history.epochs[best_epoch - 1].val_loss;
    info!(best_epoch, best_loss, completed, "training finished");
    let meta = metadata(config, tcfg, completed, best_epoch, best_val, &train_set, &val_set);
    Ok((model.with_training(meta), history))
}

fn metadata(
    config: &DenseNetConfig,
    tcfg: &TrainingConfig,
    epochs_completed: usize,
    best_epoch: usize,
    best_val_loss: Option<f64>,
    train_set: &[(&SampleEntry, usize)],
    val_set: &[(&SampleEntry, usize)],
) -> TrainingMetadata {
    TrainingMetadata {
        model_name: config.variant_name(),
        optimizer: tcfg.optimizer.as_str().to_string(),
        loss: tcfg.loss.as_str().to_string(),
        batch_size: tcfg.batch_size,
        learning_rate: tcfg.learning_rate,
        epochs: tcfg.epochs,
        epochs_completed,
        best_epoch,
        best_val_loss,
        seed: tcfg.seed,
        class_weighting: tcfg.class_weighting,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
    }
}

/// Mean cross-entropy and confusion matrix over `samples`. Chunks are scored
/// in parallel and merged in chunk order, so the result equals a serial pass.
fn score_split(
    model: &TrainedModel,
    samples: &[(&SampleEntry, usize)],
    chunk: usize,
) -> Result<(f64, ConfusionMatrix), TrainError> {
    let partials: Vec<(f64, ConfusionMatrix)> = samples
        .par_chunks(chunk)
        .map(|part| -> Result<_, TrainError> {
            let images = load_images(part, model.preprocess())?;
            let refs: Vec<&ImageTensor> = images.iter().collect();
            let probs = predict_batch(model, &refs)?;
            let mut cm = ConfusionMatrix::new(model.catalog().len());
            let mut loss = 0.0;
            for (p, (_, truth)) in probs.iter().zip(part) {
                loss += cross_entropy_loss(p, *truth)?;
                cm.record(*truth, p.argmax())?;
            }
            Ok((loss, cm))
        })
        .collect::<Result<_, _>>()?;
    let mut cm = ConfusionMatrix::new(model.catalog().len());
    let mut loss = 0.0;
    for (l, part) in &partials {
        loss += l;
        cm.merge(part);
    }
    Ok((loss / samples.len() as f64, cm))
}

/// Scores `model` on one split of the manifest with weighted averaging.
pub fn evaluate(
    model: &TrainedModel,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<(EvaluationMetrics, ConfusionMatrix), TrainError> {
    evaluate_with(model, manifest, split, Averaging::Weighted)
}

pub fn evaluate_with(
    model: &TrainedModel,
    manifest: &DatasetManifest,
    split: Split,
    averaging: Averaging,
) -> Result<(EvaluationMetrics, ConfusionMatrix), TrainError> {
    let samples = indexed_split(manifest, split)
        .map_err(|l| TrainError::InvalidManifest(format!("unknown label {l}")))?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset(split));
    }
    let (loss, cm) = score_split(model, &samples, 32)?;
    let mut metrics = metrics_from_confusion(&cm, averaging)?;
    metrics.loss = Some(loss);
    Ok((metrics, cm))
}
