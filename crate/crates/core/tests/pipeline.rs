mod common;

use std::io::Cursor;
use std::sync::Arc;

use common::{Scripted, StubServer, SECRET};
use imagedx_core::classifier::{classify, DenseNetConfig, TrainedModel};
use imagedx_core::dataset::{preprocess_bytes, render_class_image, PreprocessConfig, Split};
use imagedx_core::llm::{Credential, LlmConfig, LlmError, LlmGateway};
use imagedx_core::report::{
    render_report, DiagnoseError, DiagnosisService, ReportFormat, ReportStatus, ReportStore,
};

fn png(class: usize) -> Vec<u8> {
    let img = render_class_image(class, Split::Val, 0, 32, 3);
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
    out
}

fn model() -> Arc<TrainedModel> {
    Arc::new(TrainedModel::initialize(DenseNetConfig::tiny(32), PreprocessConfig::with_size(32), 11).unwrap())
}

fn service(dir: &std::path::Path, gateway: LlmGateway) -> DiagnosisService {
    let store = Arc::new(ReportStore::open(dir).unwrap());
    DiagnosisService::new(model(), gateway, store)
}

fn mock() -> LlmGateway {
    LlmGateway::with_credential(LlmConfig::default(), None).unwrap()
}

#[tokio::test]
async fn mock_pipeline_produces_a_stored_report() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), mock());
    let bytes = png(4);
    let report = svc.diagnose(bytes.clone()).await.unwrap();

    let image = preprocess_bytes(&bytes, svc.model().preprocess(), "probe").unwrap();
    let expected = classify(svc.model(), &image).unwrap();
    assert_eq!(report.predicted_label, expected.label);
    assert_eq!(report.confidence, expected.confidence);
    assert_eq!(report.status, ReportStatus::Complete);
    assert!(report.sections.all_populated());
    assert!(report.parse_warnings.is_empty());
    assert_eq!(report.model_artifact_id, svc.model().artifact_id());
    report.validate().unwrap();
    assert_eq!(svc.store().get(&report.report_id).unwrap(), report);
}

#[tokio::test]
async fn mock_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), mock());
    let a = svc.diagnose(png(7)).await.unwrap();
    let mut b = svc.diagnose(png(7)).await.unwrap();
    assert_ne!(a.report_id, b.report_id);
    b.report_id = a.report_id.clone();
    b.created_at = a.created_at;
    assert_eq!(a, b);
}

#[tokio::test]
async fn corrupt_image_persists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), mock());
    let err = svc.diagnose(b"definitely not an image".to_vec()).await.unwrap_err();
    assert!(matches!(err, DiagnoseError::Decode(_)), "{err}");
    assert!(svc.store().is_empty());
}

#[tokio::test]
async fn gateway_failure_yields_degraded_report() {
    let stub = StubServer::start(vec![], Some(Scripted::status(503, "down"))).await;
    let cfg = LlmConfig { max_retries: 1, ..stub.remote_config() };
    let gw = LlmGateway::with_credential(cfg, Some(Credential::new(SECRET))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), gw);
    let report = svc.diagnose(png(0)).await.unwrap();
    assert_eq!(report.status, ReportStatus::Degraded);
    assert!(report.completion_text.is_empty());
    assert!(report.llm_error.as_deref().unwrap().contains("503"));
    assert!(!report.disclaimer.is_empty());
    assert_eq!(svc.store().get(&report.report_id).unwrap(), report);
    assert!(render_report(&report, ReportFormat::Text).contains("LANGUAGE MODEL OUTPUT MISSING"));

    let strict = svc.clone().with_degraded_reports(false);
    let err = strict.diagnose(png(0)).await.unwrap_err();
    assert!(matches!(err, DiagnoseError::Gateway(LlmError::RemoteError { .. })), "{err}");
    assert_eq!(strict.store().len(), 1);
}

#[tokio::test]
async fn remote_completion_is_split_into_sections() {
    let text = "Summary first.\n**Findings Summary:**\nA\n**Possible Causes:**\nB\n**Prescriptions and Treatment:**\nC\n**Follow-Up:**\nD";
    let stub = StubServer::start(vec![Scripted::ok(text)], None).await;
    let gw = LlmGateway::with_credential(stub.remote_config(), Some(Credential::new(SECRET))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = service(dir.path(), gw).diagnose(png(1)).await.unwrap();
    assert_eq!(report.sections.findings_summary, "Summary first.\n\nA");
    assert_eq!(report.sections.follow_up, "D");
    assert_eq!(report.llm_model_name, "gpt-3.5-turbo-0125");
    let stored = std::fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    assert!(!stored.contains(SECRET));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_diagnoses_do_not_corrupt_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), mock());
    let tasks: Vec<_> = (0..24)
        .map(|i| {
            let svc = svc.clone();
            tokio::spawn(async move { svc.diagnose(png(i % 25)).await.unwrap().report_id })
        })
        .collect();
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    let reopened = ReportStore::open(dir.path()).unwrap();
    assert_eq!(reopened.len(), 24);
    for id in &ids {
        reopened.get(id).unwrap().validate().unwrap();
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 24);
}
