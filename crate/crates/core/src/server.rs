//! HTTP front end for the diagnosis pipeline.
//!
//! | Route | |
//! | --- | --- |
//! | `POST /v1/diagnose` | raw image bytes in the body, returns the stored report |
//! | `GET /v1/reports/{id}` | a stored report |
//! | `GET /v1/health` | model and language-model status |
//! | `GET /v1/model` | artifact metadata plus attached evaluation metrics |

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::classifier::{read_attached_metrics, ModelError};
use crate::report::{DiagnoseError, DiagnosisService, ReportStore, StoreError};
use crate::llm::LlmGateway;
use crate::training::parse_metrics_file;

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    /// `None` when no model could be loaded; diagnosis then answers 503.
    service: Option<DiagnosisService>,
    gateway: LlmGateway,
    store: Arc<ReportStore>,
    model_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(service: DiagnosisService, store: Arc<ReportStore>, model_dir: Option<PathBuf>) -> Self {
        Self {
            gateway: service.gateway().clone(),
            service: Some(service),
            store,
            model_dir,
        }
    }

    pub fn without_model(gateway: LlmGateway, store: Arc<ReportStore>) -> Self {
        Self {
            service: None,
            gateway,
            store,
            model_dir: None,
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1, "status": self.0.as_u16() }))).into_response()
    }
}

fn model_not_loaded() -> ApiError {
    ApiError(StatusCode::SERVICE_UNAVAILABLE, "no model loaded".into())
}

impl From<DiagnoseError> for ApiError {
    fn from(e: DiagnoseError) -> Self {
        let status = match &e {
            DiagnoseError::Decode(_) => StatusCode::BAD_REQUEST,
            DiagnoseError::Model(ModelError::ShapeMismatch(_)) => StatusCode::BAD_REQUEST,
            DiagnoseError::Gateway(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/diagnose", post(diagnose))
        .route("/v1/reports/{id}", get(get_report))
        .route("/v1/health", get(health))
        .route("/v1/model", get(model_info))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

async fn diagnose(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let service = state.service.as_ref().ok_or_else(model_not_loaded)?;
    if body.is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "request body is empty; send the image bytes".into()));
    }
    let report = service.diagnose(body.to_vec()).await?;
    Ok(Json(report).into_response())
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = Arc::clone(&state.store);
    let result = tokio::task::spawn_blocking(move || store.get(&id))
        .await
        .expect("store task panicked");
    match result {
        Ok(report) => Ok(Json(report).into_response()),
        Err(e @ StoreError::NotFound(_)) => Err(ApiError(StatusCode::NOT_FOUND, e.to_string())),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    let llm = match state.gateway.healthcheck().await {
        Ok(h) => json!(h),
        Err(e) => json!({ "healthy": false, "error": e.to_string() }),
    };
    let model_loaded = state.service.is_some();
    let status = if model_loaded { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    let body = json!({
        "status": if model_loaded { "ok" } else { "no model loaded" },
        "model_loaded": model_loaded,
        "model_artifact_id": state.service.as_ref().map(|s| s.model().artifact_id().to_string()),
        "llm": llm,
        "reports_stored": state.store.len(),
    });
    (status, Json(body)).into_response()
}

async fn model_info(State(state): State<AppState>) -> Result<Response, ApiError> {
    let service = state.service.as_ref().ok_or_else(model_not_loaded)?;
    let mut body = service.model().describe();
    let metrics = state
        .model_dir
        .as_deref()
        .and_then(read_attached_metrics)
        .and_then(|text| parse_metrics_file(&text).ok())
        .map(|m| m.to_json());
    body["evaluation"] = metrics.unwrap_or(serde_json::Value::Null);
    Ok(Json(body).into_response())
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
