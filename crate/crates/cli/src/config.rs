//! `imagedx train --config` file.
//!
//! ```toml
//! [model]
//! variant = "densenet121"   # or "tiny"
//! input_size = 224
//!
//! [training]
//! epochs = 100
//! batch_size = 16
//! learning_rate = 0.0001
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use imagedx_core::classifier::DenseNetConfig;
use imagedx_core::dataset::PreprocessConfig;
use imagedx_core::training::TrainingConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelSection,
    pub preprocess: Option<PreprocessConfig>,
    pub training: TrainingConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub input_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: "densenet121".into(),
            input_size: 224,
        }
    }
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn resolve(self) -> Result<(DenseNetConfig, PreprocessConfig, TrainingConfig)> {
        let size = self.model.input_size;
        let mut model = match self.model.variant.as_str() {
            "densenet121" => DenseNetConfig::default(),
            "tiny" => DenseNetConfig::tiny(size),
            other => bail!("unknown model variant {other:?} (expected densenet121 or tiny)"),
        };
        model.input_shape = (size, size, 3);
        let preprocess = self.preprocess.unwrap_or_else(|| PreprocessConfig::with_size(size as u32));
        if (preprocess.target_height as usize, preprocess.target_width as usize) != (size, size) {
            bail!("preprocess size must match model input_size {size}");
        }
        Ok((model, preprocess, self.training))
    }
}
