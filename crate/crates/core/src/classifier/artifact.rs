//! Model artifact directory:
//!
//! ```text
//! model.json           schema_version, artifact_id, config, layer plan,
//!                      catalog snapshot, preprocess snapshot, training metadata,
//!                      weights file name and its sha256
//! weights.safetensors  every parameter and batch-norm running statistic
//! metrics.txt          optional evaluation results attached after training
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use candle_core::{Device, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{build_model, DenseNetConfig, ModelSpec};
use super::network::{build_network, DenseNet};
use super::ModelError;
use crate::dataset::PreprocessConfig;
use crate::label::{catalog, parse_label, LabelCatalog};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;
const METADATA_FILE: &str = "model.json";
const WEIGHTS_FILE: &str = "weights.safetensors";
pub const METRICS_FILE: &str = "metrics.txt";

/// Hyperparameters and outcome of the training run that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub model_name: String,
    pub optimizer: String,
    pub loss: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    pub class_weighting: bool,
    pub train_samples: usize,
    pub val_samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactMetadata {
    schema_version: u32,
    artifact_id: String,
    config: DenseNetConfig,
    spec: ModelSpec,
    catalog: Vec<String>,
    preprocess: PreprocessConfig,
    training: Option<TrainingMetadata>,
    weights_file: String,
    weights_sha256: String,
}

/// A classifier plus everything needed to reproduce its predictions.
/// Read-only once constructed; safe to share across threads.
pub struct TrainedModel {
    config: DenseNetConfig,
    spec: ModelSpec,
    network: DenseNet,
    varmap: VarMap,
    catalog: LabelCatalog,
    preprocess: PreprocessConfig,
    training: Option<TrainingMetadata>,
    artifact_id: OnceLock<String>,
}

impl std::fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainedModel")
            .field("variant", &self.config.variant_name())
            .field("parameters", &self.varmap.all_vars().len())
            .field("training", &self.training)
            .finish_non_exhaustive()
    }
}

fn artifact_err(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Artifact {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_compatible(config: &DenseNetConfig, preprocess: &PreprocessConfig, classes: usize) -> Result<(), ModelError> {
    if config.num_classes != classes {
        return Err(ModelError::ConfigError(format!(
            "model has {} outputs but the catalog has {classes} classes",
            config.num_classes
        )));
    }
    let (h, w, _) = config.input_shape;
    if (preprocess.target_height as usize, preprocess.target_width as usize) != (h, w) {
        return Err(ModelError::ConfigError(format!(
            "preprocess target {}x{} does not match model input {h}x{w}",
            preprocess.target_height, preprocess.target_width
        )));
    }
    preprocess
        .validate()
        .map_err(|e| ModelError::ConfigError(e.to_string()))
}

impl TrainedModel {
    /// A freshly initialized (untrained) model over the built-in catalog.
    pub fn initialize(config: DenseNetConfig, preprocess: PreprocessConfig, seed: u64) -> Result<Self, ModelError> {
        let spec = build_model(&config)?;
        check_compatible(&config, &preprocess, catalog().len())?;
        let (network, varmap) = build_network(&config, seed)?;
        Ok(Self {
            config,
            spec,
            network,
            varmap,
            catalog: catalog().clone(),
            preprocess,
            training: None,
            artifact_id: OnceLock::new(),
        })
    }

    pub(crate) fn with_training(mut self, training: TrainingMetadata) -> Self {
        self.training = Some(training);
        self.artifact_id = OnceLock::new();
        self
    }

    pub fn config(&self) -> &DenseNetConfig {
        &self.config
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn network(&self) -> &DenseNet {
        &self.network
    }

    pub(crate) fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn catalog(&self) -> &LabelCatalog {
        &self.catalog
    }

    pub fn preprocess(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn training(&self) -> Option<&TrainingMetadata> {
        self.training.as_ref()
    }

    pub fn input_hw(&self) -> (usize, usize) {
        (self.config.input_shape.0, self.config.input_shape.1)
    }

    /// Content hash over weights, structure, catalog and preprocessing.
    /// Two artifacts with equal ids produce identical predictions.
    pub fn artifact_id(&self) -> &str {
        self.artifact_id.get_or_init(|| {
            let mut hasher = Sha256::new();
            let data = self.varmap.data().lock().expect("varmap lock poisoned");
            let mut names: Vec<&String> = data.keys().collect();
            names.sort();
            for name in names {
                let t = data[name].as_tensor();
                hasher.update(name.as_bytes());
                for d in t.dims() {
                    hasher.update((*d as u64).to_le_bytes());
                }
                let values: Vec<f32> = t
                    .flatten_all()
                    .and_then(|t| t.to_vec1())
                    .expect("f32 parameters");
                for v in values {
                    hasher.update(v.to_le_bytes());
                }
            }
            hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
            hasher.update(self.catalog.to_strings().join("\n").as_bytes());
            hasher.update(serde_json::to_vec(&self.preprocess).expect("preprocess serializes"));
            hex::encode(&hasher.finalize()[..8])
        })
    }

    /// Copies of every parameter tensor, keyed by name.
    pub(crate) fn snapshot(&self) -> Result<HashMap<String, Tensor>, ModelError> {
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        data.iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub(crate) fn restore(&self, snapshot: &HashMap<String, Tensor>) -> Result<(), ModelError> {
        let data = self.varmap.data().lock().expect("varmap lock poisoned");
        for (name, var) in data.iter() {
            let t = snapshot
                .get(name)
                .ok_or_else(|| ModelError::ShapeMismatch(format!("snapshot lacks {name}")))?;
            var.set(t)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ModelError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let weights_path = dir.join(WEIGHTS_FILE);
        let tmp = dir.join(format!("{WEIGHTS_FILE}.tmp"));
        self.varmap.save(&tmp)?;
        fs::rename(&tmp, &weights_path).map_err(io(&weights_path))?;
        let bytes = fs::read(&weights_path).map_err(io(&weights_path))?;
        let meta = ArtifactMetadata {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            artifact_id: self.artifact_id().to_string(),
            config: self.config.clone(),
            spec: self.spec.clone(),
            catalog: self.catalog.to_strings(),
            preprocess: self.preprocess.clone(),
            training: self.training.clone(),
            weights_file: WEIGHTS_FILE.to_string(),
            weights_sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let meta_path = dir.join(METADATA_FILE);
        let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
        let tmp = dir.join(format!("{METADATA_FILE}.tmp"));
        fs::write(&tmp, json).map_err(io(&tmp))?;
        fs::rename(&tmp, &meta_path).map_err(io(&meta_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let meta_path = dir.join(METADATA_FILE);
        let raw = fs::read(&meta_path).map_err(|source| ModelError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: ArtifactMetadata =
            serde_json::from_slice(&raw).map_err(|e| artifact_err(&meta_path, e.to_string()))?;
        if meta.schema_version != ARTIFACT_SCHEMA_VERSION {
            return Err(artifact_err(
                &meta_path,
                format!("unsupported schema_version {}", meta.schema_version),
            ));
        }
        let spec = build_model(&meta.config)?;
        if spec != meta.spec {
            return Err(artifact_err(&meta_path, "layer plan does not match config"));
        }
        let labels = meta
            .catalog
            .iter()
            .map(|s| parse_label(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| artifact_err(&meta_path, e.to_string()))?;
        let snapshot = LabelCatalog::from_entries(labels)
            .ok_or_else(|| artifact_err(&meta_path, "catalog snapshot has duplicates"))?;
        check_compatible(&meta.config, &meta.preprocess, snapshot.len())?;

        let weights_path = dir.join(&meta.weights_file);
        let bytes = fs::read(&weights_path).map_err(|source| ModelError::Io {
            path: weights_path.clone(),
            source,
        })?;
        if hex::encode(Sha256::digest(&bytes)) != meta.weights_sha256 {
            return Err(artifact_err(&weights_path, "weights do not match the recorded sha256"));
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let (network, varmap) = build_network(&meta.config, 0)?;
        {
            let data = varmap.data().lock().expect("varmap lock poisoned");
            if tensors.len() != data.len() {
                return Err(artifact_err(
                    &weights_path,
                    format!("expected {} tensors, found {}", data.len(), tensors.len()),
                ));
            }
            for (name, var) in data.iter() {
                let t = tensors
                    .get(name)
                    .ok_or_else(|| artifact_err(&weights_path, format!("missing tensor {name}")))?;
                if t.dims() != var.dims() {
                    return Err(artifact_err(
                        &weights_path,
                        format!("tensor {name} has shape {:?}, expected {:?}", t.dims(), var.dims()),
                    ));
                }
                var.set(t)?;
            }
        }
        let model = Self {
            config: meta.config,
            spec,
            network,
            varmap,
            catalog: snapshot,
            preprocess: meta.preprocess,
            training: meta.training,
            artifact_id: OnceLock::new(),
        };
        if model.artifact_id() != meta.artifact_id {
            return Err(artifact_err(
                &meta_path,
                format!(
                    "artifact id mismatch: recorded {}, computed {}",
                    meta.artifact_id,
                    model.artifact_id()
                ),
            ));
        }
        Ok(model)
    }

    /// JSON summary served by the HTTP `/v1/model` endpoint.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": ARTIFACT_SCHEMA_VERSION,
            "artifact_id": self.artifact_id(),
            "variant": self.config.variant_name(),
            "config": self.config,
            "depth": self.spec.depth(),
            "catalog": self.catalog.to_strings(),
            "preprocess": self.preprocess,
            "training": self.training,
        })
    }
}

/// Evaluation text attached to an artifact directory, if any.
pub fn read_attached_metrics(dir: &Path) -> Option<String> {
    fs::read_to_string(dir.join(METRICS_FILE)).ok()
}

pub fn attached_metrics_path(dir: &Path) -> PathBuf {
    dir.join(METRICS_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainedModel {
        TrainedModel::initialize(DenseNetConfig::tiny(32), PreprocessConfig::with_size(32), 3).unwrap()
    }

    #[test]
    fn save_load_preserves_identity() {
        let model = tiny();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = TrainedModel::load(dir.path()).unwrap();
        assert_eq!(back.artifact_id(), model.artifact_id());
        assert_eq!(back.config(), model.config());
        assert_eq!(back.catalog(), model.catalog());
    }

    #[test]
    fn tampered_weights_are_detected() {
        let model = tiny();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let err = TrainedModel::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("sha256"), "{err}");
    }

    #[test]
    fn mixed_artifacts_are_detected() {
        let a = tiny();
        let b = TrainedModel::initialize(DenseNetConfig::tiny(32), PreprocessConfig::with_size(32), 4).unwrap();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        a.save(da.path()).unwrap();
        b.save(db.path()).unwrap();
        // Swap in b's weights and fix up the hash so only the id guard can catch it.
        let wb = fs::read(db.path().join(WEIGHTS_FILE)).unwrap();
        fs::write(da.path().join(WEIGHTS_FILE), &wb).unwrap();
        let meta_path = da.path().join(METADATA_FILE);
        let mut meta: serde_json::Value = serde_json::from_slice(&fs::read(&meta_path).unwrap()).unwrap();
        meta["weights_sha256"] = hex::encode(Sha256::digest(&wb)).into();
        fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
        let err = TrainedModel::load(da.path()).unwrap_err();
        assert!(err.to_string().contains("artifact id mismatch"), "{err}");
    }

    #[test]
    fn incompatible_preprocess_is_rejected() {
        let err = TrainedModel::initialize(DenseNetConfig::tiny(32), PreprocessConfig::with_size(64), 0).unwrap_err();
        assert!(matches!(err, ModelError::ConfigError(_)));
        let err = TrainedModel::initialize(
            DenseNetConfig { num_classes: 2, ..DenseNetConfig::tiny(32) },
            PreprocessConfig::with_size(32),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::ConfigError(_)));
    }

    #[test]
    fn metadata_records_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        tiny().save(dir.path()).unwrap();
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(METADATA_FILE)).unwrap()).unwrap();
        assert_eq!(meta["schema_version"], 1);
        assert_eq!(meta["catalog"].as_array().unwrap().len(), 25);
    }
}
