use std::sync::Arc;

use chrono::Utc;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{split_sections, DiagnosisReport, ReportStatus, ReportStore, StoreError, DISCLAIMER};
use crate::classifier::{classify, ModelError, TrainedModel};
use crate::dataset::{preprocess_bytes, DatasetError};
use crate::llm::{LlmError, LlmGateway};
use crate::prompt::{generate_prompt_with, PromptError, PromptTemplate};

#[derive(Debug, Error)]
pub enum DiagnoseError {
    #[error(transparent)]
    Decode(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    /// Only returned when degraded reports are disabled.
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Image → classification → prompt → completion → stored report.
///
/// Cheap to clone; the model, store and gateway limiter are shared.
#[derive(Clone)]
pub struct DiagnosisService {
    model: Arc<TrainedModel>,
    gateway: LlmGateway,
    template: Arc<PromptTemplate>,
    store: Arc<ReportStore>,
    allow_degraded: bool,
}

impl DiagnosisService {
    pub fn new(model: Arc<TrainedModel>, gateway: LlmGateway, store: Arc<ReportStore>) -> Self {
        Self {
            model,
            gateway,
            template: Arc::new(PromptTemplate::builtin()),
            store,
            allow_degraded: true,
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = Arc::new(template);
        self
    }

    /// When false, a gateway failure is returned as an error and nothing is stored.
    pub fn with_degraded_reports(mut self, allow: bool) -> Self {
        self.allow_degraded = allow;
        self
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub fn store(&self) -> &ReportStore {
        &self.store
    }

    pub async fn diagnose(&self, image_bytes: Vec<u8>) -> Result<DiagnosisReport, DiagnoseError> {
        let image_ref = format!("sha256:{}", hex::encode(Sha256::digest(&image_bytes)));
        let model = Arc::clone(&self.model);
        let source = image_ref.clone();
        let prediction = tokio::task::spawn_blocking(move || -> Result<_, DiagnoseError> {
            let image = preprocess_bytes(&image_bytes, model.preprocess(), &source)?;
            Ok(classify(&model, &image)?)
        })
        .await
        .expect("classification task panicked")?;

        let prompt = generate_prompt_with(&self.template, &prediction.label)?;
        let cfg = self.gateway.config();
        let (completion_text, sections, parse_warnings, status, llm_error, llm_attempts, llm_model_name) =
            match self.gateway.complete(&prompt).await {
                Ok(c) => {
                    let (sections, warnings) = split_sections(&c.text, &prompt.required_sections);
                    (c.text, sections, warnings, ReportStatus::Complete, None, c.attempt_count, c.model_name)
                }
                Err(e) if self.allow_degraded => {
                    tracing::warn!(error = %e, "LLM unavailable, storing degraded report");
                    let attempts = match &e {
                        LlmError::Timeout { attempts } | LlmError::RateLimited { attempts } => *attempts,
                        _ => 0,
                    };
                    (
                        String::new(),
                        Default::default(),
                        Vec::new(),
                        ReportStatus::Degraded,
                        Some(e.to_string()),
                        attempts,
                        cfg.model_name.clone(),
                    )
                }
                Err(e) => return Err(e.into()),
            };

        let report = DiagnosisReport {
            report_id: uuid::Uuid::new_v4().to_string(),
            created_at: Utc::now(),
            image_ref,
            predicted_label: prediction.label,
            confidence: prediction.confidence,
            class_probabilities: prediction.probabilities.probs,
            prompt_text: prompt.text,
            template_version: prompt.template_version,
            completion_text,
            sections,
            parse_warnings,
            model_artifact_id: self.model.artifact_id().to_string(),
            llm_model_name,
            backend: cfg.backend,
            llm_attempts,
            status,
            llm_error,
            disclaimer: DISCLAIMER.to_string(),
        };
        let store = Arc::clone(&self.store);
        let stored = report.clone();
        tokio::task::spawn_blocking(move || store.persist(&stored))
            .await
            .expect("store task panicked")?;
        Ok(report)
    }
}
