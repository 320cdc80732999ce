//! Diagnosis reports: assembly, section parsing, rendering and storage.

mod pipeline;
mod render;
mod store;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use pipeline::{DiagnoseError, DiagnosisService};
pub use render::{render_report, ReportFormat};
pub use store::{ReportStore, StoreError};

use crate::label::{catalog, HierarchicalLabel};
use crate::llm::Backend;
use crate::prompt::Section;

pub const DISCLAIMER: &str = "This report was generated automatically by an image classifier and a language model to support clinical decision making. It is not a diagnosis and must be reviewed by a qualified clinician before any action is taken.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Complete,
    /// Classification succeeded but no completion could be obtained.
    Degraded,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSections {
    pub findings_summary: String,
    pub possible_causes: String,
    pub prescriptions_treatment: String,
    pub follow_up: String,
}

impl ReportSections {
    pub fn get(&self, section: Section) -> &str {
        match section {
            Section::FindingsSummary => &self.findings_summary,
            Section::PossibleCauses => &self.possible_causes,
            Section::PrescriptionsTreatment => &self.prescriptions_treatment,
            Section::FollowUp => &self.follow_up,
        }
    }

    fn get_mut(&mut self, section: Section) -> &mut String {
        match section {
            Section::FindingsSummary => &mut self.findings_summary,
            Section::PossibleCauses => &mut self.possible_causes,
            Section::PrescriptionsTreatment => &mut self.prescriptions_treatment,
            Section::FollowUp => &mut self.follow_up,
        }
    }

    pub fn all_populated(&self) -> bool {
        Section::ALL.iter().all(|s| !self.get(*s).trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub report_id: String,
    pub created_at: DateTime<Utc>,
    /// `sha256:<hex>` digest of the submitted image bytes.
    pub image_ref: String,
    pub predicted_label: HierarchicalLabel,
    pub confidence: f32,
    pub class_probabilities: Vec<f32>,
    pub prompt_text: String,
    pub template_version: String,
    pub completion_text: String,
    pub sections: ReportSections,
    pub parse_warnings: Vec<String>,
    pub model_artifact_id: String,
    pub llm_model_name: String,
    pub backend: Backend,
    pub llm_attempts: u32,
    pub status: ReportStatus,
    pub llm_error: Option<String>,
    pub disclaimer: String,
}

impl DiagnosisReport {
    /// Checks the structural invariants every stored report must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if !catalog().contains(&self.predicted_label) {
            return Err(format!("label {} is not in the catalog", self.predicted_label));
        }
        if self.class_probabilities.len() != catalog().len() {
            return Err(format!(
                "expected {} class probabilities, found {}",
                catalog().len(),
                self.class_probabilities.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        let max = self.class_probabilities.iter().copied().fold(f32::MIN, f32::max);
        if max != self.confidence {
            return Err(format!("confidence {} differs from max probability {max}", self.confidence));
        }
        let idx = catalog().index_of(&self.predicted_label).expect("checked above");
        if self.class_probabilities[idx] != max {
            return Err("predicted label is not the most probable class".into());
        }
        if self.disclaimer.trim().is_empty() {
            return Err("missing disclaimer".into());
        }
        if self.status == ReportStatus::Degraded && !self.completion_text.is_empty() {
            return Err("degraded report carries a completion".into());
        }
        Ok(())
    }
}

/// Matches a line against the required headings. Tolerates markdown markers
/// (`#`, `**`, `__`), list numbering and a trailing colon.
fn heading_of(line: &str, required: &[Section]) -> Option<Section> {
    let mut s = line.trim().trim_start_matches('#').trim();
    if let Some(rest) = s.split_once(['.', ')']).and_then(|(n, rest)| {
        (!n.is_empty() && n.chars().all(|c| c.is_ascii_digit())).then_some(rest)
    }) {
        s = rest.trim();
    }
    let s = s.trim_matches(|c| c == '*' || c == '_').trim();
    let s = s.strip_suffix(':').unwrap_or(s).trim();
    let s = s.trim_matches(|c| c == '*' || c == '_').trim();
    required
        .iter()
        .copied()
        .find(|sec| s.eq_ignore_ascii_case(sec.heading()))
}

/// Splits a completion into the required sections.
///
/// Text before the first heading is placed at the start of the findings
/// summary. Missing or repeated headings produce warnings, never errors.
pub fn split_sections(text: &str, required: &[Section]) -> (ReportSections, Vec<String>) {
    let mut sections = ReportSections::default();
    let mut warnings = Vec::new();
    let mut seen: Vec<Section> = Vec::new();
    let mut preamble: Vec<&str> = Vec::new();
    let mut current: Option<(Section, Vec<&str>)> = None;
    let mut bodies: Vec<(Section, String)> = Vec::new();

    let flush = |current: &mut Option<(Section, Vec<&str>)>, bodies: &mut Vec<(Section, String)>| {
        if let Some((sec, lines)) = current.take() {
            bodies.push((sec, lines.join("\n").trim().to_string()));
        }
    };
    for line in text.lines() {
        match heading_of(line, required) {
            Some(sec) => {
                flush(&mut current, &mut bodies);
                if seen.contains(&sec) {
                    warnings.push(format!("heading \"{}\" appears more than once", sec.heading()));
                } else {
                    seen.push(sec);
                }
                current = Some((sec, Vec::new()));
            }
            None => match current.as_mut() {
                Some((_, lines)) => lines.push(line),
                None => preamble.push(line),
            },
        }
    }
    flush(&mut current, &mut bodies);

    for (sec, body) in bodies {
        let slot = sections.get_mut(sec);
        if !body.is_empty() {
            if !slot.is_empty() {
                slot.push_str("\n\n");
            }
            slot.push_str(&body);
        }
    }
    let preamble = preamble.join("\n").trim().to_string();
    if !preamble.is_empty() {
        if !seen.contains(&Section::FindingsSummary) {
            warnings.push("findings summary taken from text before the first heading".into());
        }
        let findings = &mut sections.findings_summary;
        *findings = if findings.is_empty() {
            preamble
        } else {
            format!("{preamble}\n\n{findings}")
        };
    }
    for sec in required {
        if !seen.contains(sec) {
            warnings.push(format!("missing heading \"{}\"", sec.heading()));
        }
    }
    (sections, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::parse_label;
    use crate::llm::mock_completion;
    use crate::prompt::generate_prompt;
    use proptest::prelude::*;

    #[test]
    fn mock_completions_split_cleanly() {
        for label in catalog().entries() {
            let p = generate_prompt(label).unwrap();
            let (s, w) = split_sections(&mock_completion(&p, "m"), &Section::ALL);
            assert!(s.all_populated(), "{label}");
            assert!(w.is_empty(), "{label}: {w:?}");
        }
    }

    #[test]
    fn no_headings_falls_back_to_findings() {
        let (s, w) = split_sections("Just some prose.\nMore prose.", &Section::ALL);
        assert_eq!(s.findings_summary, "Just some prose.\nMore prose.");
        assert!(s.possible_causes.is_empty() && s.prescriptions_treatment.is_empty() && s.follow_up.is_empty());
        assert_eq!(w.len(), 5);
    }

    #[test]
    fn heading_variants() {
        let text = "**Findings Summary:**\nA\n\n1. possible causes\nB\n### PRESCRIPTIONS AND TREATMENT\nC\n__Follow-Up__:\nD";
        let (s, w) = split_sections(text, &Section::ALL);
        assert_eq!(
            (s.findings_summary.as_str(), s.possible_causes.as_str(), s.prescriptions_treatment.as_str(), s.follow_up.as_str()),
            ("A", "B", "C", "D")
        );
        assert!(w.is_empty());
    }

    #[test]
    fn headings_inside_prose_are_not_split() {
        let (s, _) = split_sections("## Findings Summary\nSee the possible causes below.", &Section::ALL);
        assert_eq!(s.findings_summary, "See the possible causes below.");
    }

    #[test]
    fn missing_heading_warns() {
        let (s, w) = split_sections("## Findings Summary\nA\n## Follow-Up\nD", &Section::ALL);
        assert_eq!(s.findings_summary, "A");
        assert!(s.possible_causes.is_empty());
        assert_eq!(w.len(), 2);
    }

    fn permutation() -> impl Strategy<Value = Vec<usize>> {
        Just(vec![0usize, 1, 2, 3]).prop_shuffle()
    }

    proptest! {
        #[test]
        fn sections_match_by_name_in_any_order(order in permutation(), bodies in prop::array::uniform4("[a-z]{1,12}( [a-z]{1,12}){0,4}")) {
            let mut text = String::new();
            for &i in &order {
                text.push_str(&format!("## {}\n{}\n\n", Section::ALL[i].heading(), bodies[i]));
            }
            let (s, w) = split_sections(&text, &Section::ALL);
            prop_assert!(w.is_empty());
            for i in 0..4 {
                prop_assert_eq!(s.get(Section::ALL[i]), bodies[i].as_str());
            }
        }
    }

    pub(crate) fn sample_report() -> DiagnosisReport {
        let label = parse_label("mri.brain.alzheimer-test.moderate-demented").unwrap();
        let idx = catalog().index_of(&label).unwrap();
        let mut probs = vec![0.005f32; 25];
        probs[idx] = 0.88;
        let prompt = generate_prompt(&label).unwrap();
        let completion = mock_completion(&prompt, "gpt-3.5-turbo");
        let (sections, parse_warnings) = split_sections(&completion, &prompt.required_sections);
        DiagnosisReport {
            report_id: "00000000-0000-4000-8000-000000000001".into(),
            created_at: "2024-01-02T03:04:05Z".parse().unwrap(),
            image_ref: "sha256:0000000000000000000000000000000000000000000000000000000000000000".into(),
            predicted_label: label,
            confidence: 0.88,
            class_probabilities: probs,
            prompt_text: prompt.text,
            template_version: prompt.template_version,
            completion_text: completion,
            sections,
            parse_warnings,
            model_artifact_id: "0123456789abcdef".into(),
            llm_model_name: "gpt-3.5-turbo".into(),
            backend: Backend::Mock,
            llm_attempts: 1,
            status: ReportStatus::Complete,
            llm_error: None,
            disclaimer: DISCLAIMER.into(),
        }
    }

    #[test]
    fn validation() {
        let r = sample_report();
        r.validate().unwrap();
        let mut bad = r.clone();
        bad.confidence = 0.5;
        assert!(bad.validate().is_err());
        let mut bad = r.clone();
        bad.disclaimer.clear();
        assert!(bad.validate().is_err());
        let mut bad = r.clone();
        bad.class_probabilities.pop();
        assert!(bad.validate().is_err());
        let mut bad = r;
        bad.predicted_label = parse_label("pet.x.y.z").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = sample_report();
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back: DiagnosisReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(text.contains("\"predicted_label\": \"mri.brain.alzheimer-test.moderate-demented\""));
    }
}
