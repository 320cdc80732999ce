use std::fmt::Write as _;
use std::str::FromStr;

use super::{DiagnosisReport, ReportStatus};
use crate::label::LabelField;
use crate::prompt::{humanize_token, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?} (expected text or markdown)")),
        }
    }
}

const FIELD_TITLES: [(LabelField, &str); 4] = [
    (LabelField::Scan, "Scan type"),
    (LabelField::BodyPart, "Body part"),
    (LabelField::Test, "Test"),
    (LabelField::Result, "Result"),
];

fn degraded_notice(report: &DiagnosisReport) -> String {
    let reason = report.llm_error.as_deref().unwrap_or("unknown error");
    format!(
        "LANGUAGE MODEL OUTPUT MISSING: no completion could be obtained ({reason}). Only the classification result below is available."
    )
}

pub fn render_report(report: &DiagnosisReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn section_body(report: &DiagnosisReport, section: Section) -> &str {
    let body = report.sections.get(section).trim();
    if body.is_empty() {
        "(not available)"
    } else {
        body
    }
}

fn render_text(r: &DiagnosisReport) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "DIAGNOSIS REPORT").unwrap();
    writeln!(w, "================").unwrap();
    if r.status == ReportStatus::Degraded {
        writeln!(w, "\n*** {} ***", degraded_notice(r)).unwrap();
    }
    writeln!(w).unwrap();
    for (field, title) in FIELD_TITLES {
        writeln!(w, "{:<12}{}", format!("{title}:"), humanize_token(r.predicted_label.field(field), field)).unwrap();
    }
    writeln!(w, "{:<12}{}", "Label:", r.predicted_label).unwrap();
    writeln!(w, "{:<12}{:.2}%", "Confidence:", r.confidence * 100.0).unwrap();
    for section in Section::ALL {
        let heading = section.heading();
        writeln!(w, "\n{heading}\n{}\n{}", "-".repeat(heading.len()), section_body(r, section)).unwrap();
    }
    writeln!(w, "\nReport ID:   {}", r.report_id).unwrap();
    writeln!(w, "Created:     {}", r.created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)).unwrap();
    writeln!(w, "Image:       {}", r.image_ref).unwrap();
    writeln!(w, "Classifier:  {}", r.model_artifact_id).unwrap();
    writeln!(w, "LLM:         {} ({} backend)", r.llm_model_name, r.backend).unwrap();
    writeln!(w, "Prompt:      template {}", r.template_version).unwrap();
    for warning in &r.parse_warnings {
        writeln!(w, "Warning:     {warning}").unwrap();
    }
    writeln!(w, "\n{}", r.disclaimer).unwrap();
    out
}

fn render_markdown(r: &DiagnosisReport) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "# Diagnosis Report").unwrap();
    if r.status == ReportStatus::Degraded {
        writeln!(w, "\n> **{}**", degraded_notice(r)).unwrap();
    }
    writeln!(w, "\n| Field | Value |\n| --- | --- |").unwrap();
    for (field, title) in FIELD_TITLES {
        writeln!(w, "| {title} | {} |", humanize_token(r.predicted_label.field(field), field)).unwrap();
    }
    writeln!(w, "| Label | `{}` |", r.predicted_label).unwrap();
    writeln!(w, "| Confidence | {:.2}% |", r.confidence * 100.0).unwrap();
    for section in Section::ALL {
        writeln!(w, "\n## {}\n\n{}", section.heading(), section_body(r, section)).unwrap();
    }
    writeln!(w, "\n## Provenance\n").unwrap();
    writeln!(w, "- Report ID: `{}`", r.report_id).unwrap();
    writeln!(w, "- Created: {}", r.created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)).unwrap();
    writeln!(w, "- Image: `{}`", r.image_ref).unwrap();
    writeln!(w, "- Classifier artifact: `{}`", r.model_artifact_id).unwrap();
    writeln!(w, "- Language model: {} ({} backend)", r.llm_model_name, r.backend).unwrap();
    writeln!(w, "- Prompt template: {}", r.template_version).unwrap();
    for warning in &r.parse_warnings {
        writeln!(w, "- Parse warning: {warning}").unwrap();
    }
    writeln!(w, "\n> {}", r.disclaimer).unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::tests::sample_report;
    use crate::report::ReportSections;

    #[test]
    fn renderings_contain_label_fields() {
        let r = sample_report();
        for fmt in [ReportFormat::Text, ReportFormat::Markdown] {
            let s = render_report(&r, fmt);
            for needle in ["MRI scan", "brain", "Alzheimer's test", "moderate demented", "88.00%", "Follow-Up", &r.disclaimer] {
                assert!(s.contains(needle), "{fmt:?} missing {needle}");
            }
            assert_eq!(s, render_report(&r, fmt));
        }
    }

    #[test]
    fn degraded_is_flagged() {
        let mut r = sample_report();
        r.status = ReportStatus::Degraded;
        r.completion_text.clear();
        r.sections = ReportSections::default();
        r.llm_error = Some("LLM request timed out after 4 attempt(s)".into());
        for fmt in [ReportFormat::Text, ReportFormat::Markdown] {
            let s = render_report(&r, fmt);
            assert!(s.contains("LANGUAGE MODEL OUTPUT MISSING"));
            assert!(s.contains("timed out"));
            assert!(s.contains("(not available)"));
        }
    }

    #[test]
    fn golden_markdown() {
        // Regenerate with UPDATE_GOLDEN=1 after an intended rendering change.
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/report_moderate_demented.md");
        let s = render_report(&sample_report(), ReportFormat::Markdown);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(path, &s).unwrap();
        }
        assert_eq!(s, std::fs::read_to_string(path).unwrap());
    }
}
