//! Turns a predicted label into the text prompt sent to the language model.
//!
//! Templates are plain UTF-8 with a small header:
//!
//! ```text
//! template_version: v1
//! ---
//! ... body with {scan}, {body_part}, {test} and {result} placeholders ...
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{catalog, HierarchicalLabel, LabelField};

const BUILTIN_TEMPLATE: &str = include_str!("../resources/diagnosis_prompt.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("label {0} is not in the catalog")]
    UnknownLabel(HierarchicalLabel),
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("cannot read prompt template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Report sections the prompt asks for, in prompt order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    FindingsSummary,
    PossibleCauses,
    PrescriptionsTreatment,
    FollowUp,
}

impl Section {
    pub const ALL: [Section; 4] = [
        Section::FindingsSummary,
        Section::PossibleCauses,
        Section::PrescriptionsTreatment,
        Section::FollowUp,
    ];

    /// Heading text the model is told to emit.
    pub fn heading(self) -> &'static str {
        match self {
            Section::FindingsSummary => "Findings Summary",
            Section::PossibleCauses => "Possible Causes",
            Section::PrescriptionsTreatment => "Prescriptions and Treatment",
            Section::FollowUp => "Follow-Up",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Section::FindingsSummary => "findings_summary",
            Section::PossibleCauses => "possible_causes",
            Section::PrescriptionsTreatment => "prescriptions_treatment",
            Section::FollowUp => "follow_up",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.heading())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisPrompt {
    pub text: String,
    pub source_label: HierarchicalLabel,
    pub template_version: String,
    pub required_sections: Vec<Section>,
}

/// Display form of a label token. Curated entries cover every catalog token
/// that needs more than hyphen-to-space; everything else falls back to that.
/// The raw label is never altered.
pub fn humanize_token(token: &str, field: LabelField) -> String {
    let curated = match (field, token) {
        (LabelField::Scan, "ct-scan") => Some("CT scan"),
        (LabelField::Scan, "mri") => Some("MRI scan"),
        (LabelField::Scan, "oct-scan") => Some("OCT scan"),
        (LabelField::Scan, "xray") => Some("X-ray"),
        (LabelField::Test, "alzheimer-test") => Some("Alzheimer's test"),
        (LabelField::Test, "rential-oct-test") => Some("retinal OCT test"),
        (LabelField::Result, "covid19") => Some("COVID-19"),
        (_, "rential") => Some("retinal"),
        (_, "turberculosis") => Some("tuberculosis"),
        _ => None,
    };
    curated
        .map(str::to_string)
        .unwrap_or_else(|| token.replace('-', " "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    version: String,
    body: String,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATE).expect("built-in template is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let (header, body) = text
            .split_once("\n---\n")
            .ok_or_else(|| PromptError::InvalidTemplate("missing `---` header separator".into()))?;
        let version = header
            .lines()
            .find_map(|l| l.strip_prefix("template_version:"))
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| PromptError::InvalidTemplate("missing template_version".into()))?;
        for placeholder in ["{scan}", "{body_part}", "{test}", "{result}"] {
            if !body.contains(placeholder) {
                return Err(PromptError::InvalidTemplate(format!("missing placeholder {placeholder}")));
            }
        }
        let lower = body.to_lowercase();
        for section in Section::ALL {
            if !lower.contains(&section.heading().to_lowercase()) {
                return Err(PromptError::InvalidTemplate(format!(
                    "template never requests the {:?} heading",
                    section.heading()
                )));
            }
        }
        Ok(Self {
            version,
            body: body.to_string(),
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn render(&self, label: &HierarchicalLabel) -> String {
        self.body
            .replace("{scan}", &humanize_token(label.scan_name(), LabelField::Scan))
            .replace("{body_part}", &humanize_token(label.body_part(), LabelField::BodyPart))
            .replace("{test}", &humanize_token(label.test_name(), LabelField::Test))
            .replace("{result}", &humanize_token(label.result(), LabelField::Result))
    }
}

/// Builds the prompt for `label` from the built-in template.
pub fn generate_prompt(label: &HierarchicalLabel) -> Result<DiagnosisPrompt, PromptError> {
    generate_prompt_with(&PromptTemplate::builtin(), label)
}

pub fn generate_prompt_with(
    template: &PromptTemplate,
    label: &HierarchicalLabel,
) -> Result<DiagnosisPrompt, PromptError> {
    if !catalog().contains(label) {
        return Err(PromptError::UnknownLabel(label.clone()));
    }
    Ok(DiagnosisPrompt {
        text: template.render(label),
        source_label: label.clone(),
        template_version: template.version().to_string(),
        required_sections: Section::ALL.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::parse_label;

    #[test]
    fn humanizes_tokens() {
        assert_eq!(humanize_token("ct-scan", LabelField::Scan), "CT scan");
        assert_eq!(humanize_token("covid19", LabelField::Result), "COVID-19");
        assert_eq!(humanize_token("large-cell-carcinoma", LabelField::Result), "large cell carcinoma");
        assert_eq!(humanize_token("rential", LabelField::BodyPart), "retinal");
        assert_eq!(humanize_token("brain", LabelField::BodyPart), "brain");
    }

    #[test]
    fn every_catalog_token_has_a_display_form() {
        for label in catalog().entries() {
            for field in LabelField::ALL {
                let shown = humanize_token(label.field(field), field);
                assert!(!shown.is_empty());
                assert!(!shown.contains("rential") && !shown.contains("turberculosis"), "{shown}");
            }
        }
    }

    #[test]
    fn alzheimer_prompt_content() {
        let label = parse_label("mri.brain.alzheimer-test.moderate-demented").unwrap();
        let p = generate_prompt(&label).unwrap();
        for needle in ["MRI scan", "brain", "Alzheimer's test", "moderate demented", "Possible Causes", "Prescriptions and Treatment", "Follow-Up"] {
            assert!(p.text.contains(needle), "missing {needle}");
        }
        assert_eq!(p.template_version, "v1");
        assert_eq!(p.required_sections, Section::ALL.to_vec());
    }

    #[test]
    fn oct_prompt_content() {
        let label = parse_label("oct-scan.rential.rential-oct-test.diabetic-macular-edema").unwrap();
        let p = generate_prompt(&label).unwrap();
        assert!(p.text.contains("OCT scan of the retinal region"));
        assert!(p.text.contains("diabetic macular edema"));
        assert!(!p.text.contains("rential"));
    }

    #[test]
    fn prompts_are_deterministic() {
        for label in catalog().entries() {
            assert_eq!(generate_prompt(label).unwrap(), generate_prompt(label).unwrap());
        }
    }

    #[test]
    fn golden_prompt() {
        // Any wording change must update this file and bump template_version.
        let label = parse_label("mri.brain.alzheimer-test.moderate-demented").unwrap();
        let p = generate_prompt(&label).unwrap();
        assert_eq!(p.template_version, "v1");
        assert_eq!(p.text, include_str!("../tests/golden/prompt_v1_moderate_demented.txt"));
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let label = parse_label("pet.brain.x-test.y").unwrap();
        assert!(matches!(generate_prompt(&label), Err(PromptError::UnknownLabel(_))));
    }

    #[test]
    fn custom_templates() {
        let t = PromptTemplate::parse(
            "template_version: custom-2\n---\n{scan}/{body_part}/{test}/{result}\nfindings summary, possible causes, prescriptions and treatment, follow-up\n",
        )
        .unwrap();
        let label = parse_label("xray.chest.pneumonia-test.covid19").unwrap();
        let p = generate_prompt_with(&t, &label).unwrap();
        assert!(p.text.starts_with("X-ray/chest/pneumonia test/COVID-19\n"));
        assert_eq!(p.template_version, "custom-2");

        assert!(PromptTemplate::parse("no header").is_err());
        assert!(PromptTemplate::parse("template_version: x\n---\n{scan} {body_part} {test}\n").is_err());
        assert!(PromptTemplate::parse("template_version: x\n---\n{scan} {body_part} {test} {result}\n").is_err());
    }
}
