//! DenseNet classifier: layer plan, trainable network, inference and the
//! on-disk model artifact.

mod artifact;
mod config;
mod network;

use std::path::PathBuf;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageTensor;
use crate::label::HierarchicalLabel;

pub use artifact::{
    attached_metrics_path, read_attached_metrics, TrainedModel, TrainingMetadata, ARTIFACT_SCHEMA_VERSION,
};
pub use config::{
    build_model, growth_rate_channels, BlockDesc, DenseNetConfig, LayerDesc, LayerKind, ModelSpec,
};
pub use network::{
    build_network, dense_block_forward, load_pretrained, plain_chain_forward, DenseBlock, DenseLayer,
    DenseNet, ShapeTrace,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("invalid model config: {0}")]
    ConfigError(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("model artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Softmax output over the catalog, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub probs: Vec<f32>,
}

impl ClassProbabilities {
    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f32 {
        self.probs.get(self.argmax()).copied().unwrap_or(0.0)
    }
}

pub(crate) fn batch_tensor(images: &[&ImageTensor]) -> Result<Tensor, ModelError> {
    let first = images
        .first()
        .ok_or_else(|| ModelError::ShapeMismatch("empty batch".into()))?;
    let (h, w, c) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.shape() != (h, w, c) {
            return Err(ModelError::ShapeMismatch(format!(
                "batch mixes image shapes {:?} and {:?}",
                (h, w, c),
                img.shape()
            )));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?)
}

/// Class probabilities for one image (eval mode).
pub fn predict(model: &TrainedModel, image: &ImageTensor) -> Result<ClassProbabilities, ModelError> {
    Ok(predict_batch(model, &[image])?.remove(0))
}

pub fn predict_batch(
    model: &TrainedModel,
    images: &[&ImageTensor],
) -> Result<Vec<ClassProbabilities>, ModelError> {
    let (h, w) = model.input_hw();
    for img in images {
        if img.shape() != (h, w, 3) {
            return Err(ModelError::ShapeMismatch(format!(
                "image shape {:?} does not match model input {:?}",
                img.shape(),
                (h, w, 3)
            )));
        }
    }
    let x = batch_tensor(images)?;
    let probs: Vec<Vec<f32>> = model.network().probabilities(&x)?.to_vec2()?;
    Ok(probs.into_iter().map(|probs| ClassProbabilities { probs }).collect())
}

/// A full classification: label, confidence and the probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: HierarchicalLabel,
    pub confidence: f32,
    pub probabilities: ClassProbabilities,
}

pub fn classify(model: &TrainedModel, image: &ImageTensor) -> Result<Prediction, ModelError> {
    let probabilities = predict(model, image)?;
    Ok(Prediction {
        label: label_for(model, &probabilities)?,
        confidence: probabilities.max(),
        probabilities,
    })
}

/// Most probable catalog label and its probability.
pub fn predict_label(
    model: &TrainedModel,
    image: &ImageTensor,
) -> Result<(HierarchicalLabel, f32), ModelError> {
    let p = classify(model, image)?;
    Ok((p.label, p.confidence))
}

/// Catalog label at the argmax of `probs`.
pub fn label_for(model: &TrainedModel, probs: &ClassProbabilities) -> Result<HierarchicalLabel, ModelError> {
    let idx = probs.argmax();
    model
        .catalog()
        .label_at(idx)
        .cloned()
        .ok_or_else(|| ModelError::ShapeMismatch(format!("class index {idx} outside catalog")))
}
