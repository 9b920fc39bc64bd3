//! HTTP session service for interactive segmentation and refinement.
//!
//! Masks travel as row-major run-length encodings,
//! `{"width": w, "height": h, "runs": [[value, length], ...]}`, whose first run
//! carries the value of cell (0, 0).

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thinkfirst_core::{
    ControlAnnotation, CotResult, Error, ErrorKind, ImageRef, Pipeline, PipelineMode, Rle, SegmentationOutcome,
    TaskMode,
};
use uuid::Uuid;

/// Headroom for multipart framing on top of the image size limit.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Segment,
    Refine,
}

struct HistoryEntry {
    outcome_id: Uuid,
    action: Action,
    outcome: SegmentationOutcome,
    created_at: f64,
}

struct Session {
    image: ImageRef,
    history: Vec<HistoryEntry>,
    created_at: f64,
    updated_at: f64,
}

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

pub struct AppState {
    pipeline: Arc<Pipeline>,
    sessions: RwLock<HashMap<Uuid, SessionHandle>>,
    max_image_bytes: usize,
}

impl AppState {
    pub fn new(pipeline: Pipeline, max_image_bytes: usize) -> Arc<Self> {
        Arc::new(Self {
            pipeline: Arc::new(pipeline),
            sessions: RwLock::new(HashMap::new()),
            max_image_bytes,
        })
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(&id.to_string()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.max_image_bytes + MULTIPART_OVERHEAD;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/segment", post(segment))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/history", get(history))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    stage: Option<&'static str>,
    kind: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            stage: None,
            kind: None,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match e.kind() {
            ErrorKind::InvalidArgument => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-argument"),
            ErrorKind::Protocol => (StatusCode::UNPROCESSABLE_ENTITY, "protocol"),
            ErrorKind::Backend => (StatusCode::BAD_GATEWAY, "backend"),
            ErrorKind::Usage => (StatusCode::INTERNAL_SERVER_ERROR, "usage"),
        };
        Self {
            status,
            message: e.root().to_string(),
            stage: e.stage().map(|s| s.as_str()),
            kind: Some(kind),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(stage) = self.stage {
            body["stage"] = json!(stage);
        }
        if let Some(kind) = self.kind {
            body["kind"] = json!(kind);
        }
        (self.status, Json(body)).into_response()
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let backends = state.pipeline.backends();
    let checks = [
        (backends.mllm.descriptor(), backends.mllm.health()),
        (backends.segmenter.descriptor(), backends.segmenter.health()),
    ];
    let ok = checks.iter().all(|(_, h)| h.is_ok());
    let list: Vec<_> = checks
        .into_iter()
        .map(|(d, h)| {
            json!({
                "name": d.name,
                "kind": d.kind,
                "concurrency_safe": d.concurrency_safe,
                "config": d.config,
                "reachable": h.is_ok(),
                "error": h.err().map(|e| e.to_string()),
            })
        })
        .collect();
    Json(json!({ "status": if ok { "ok" } else { "degraded" }, "backends": list }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    mut multipart: Multipart,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let mut payload = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), e.body_text()))?
    {
        if field.name() == Some("image") || (payload.is_none() && field.file_name().is_some()) {
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
            payload = Some(bytes);
        }
    }
    let bytes = payload.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "multipart field 'image' is missing"))?;
    if bytes.len() > state.max_image_bytes {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image is {} bytes, limit is {}", bytes.len(), state.max_image_bytes),
        ));
    }
    let image = ImageRef::from_bytes(bytes.to_vec())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let id = Uuid::new_v4();
    let (width, height) = image.dimensions();
    let t = now();
    state.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(
        id,
        Arc::new(tokio::sync::Mutex::new(Session {
            image,
            history: Vec::new(),
            created_at: t,
            updated_at: t,
        })),
    );
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "width": width, "height": height })),
    ))
}

#[derive(Debug, Deserialize)]
pub struct SegmentBody {
    pub query: String,
    #[serde(default)]
    pub task_mode: Option<String>,
    #[serde(default)]
    pub pipeline_mode: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct RefineBody {
    pub annotation: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutcomeView {
    pub outcome_id: Uuid,
    pub mask: Rle,
    pub composed_prompt: String,
    pub mode: PipelineMode,
    pub task_mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cot: Option<CotView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CotView {
    pub pairs: Vec<thinkfirst_core::QaPair>,
    pub summary: String,
    pub pseudo_prompt: Option<String>,
    pub degraded: bool,
}

impl From<&CotResult> for CotView {
    fn from(c: &CotResult) -> Self {
        Self {
            pairs: c.pairs.clone(),
            summary: c.summary.clone(),
            pseudo_prompt: c.pseudo_prompt.clone(),
            degraded: c.degraded,
        }
    }
}

fn view(id: Uuid, o: &SegmentationOutcome) -> OutcomeView {
    OutcomeView {
        outcome_id: id,
        mask: o.mask.to_rle(),
        composed_prompt: o.composed_prompt.clone(),
        mode: o.mode,
        task_mode: o.task_mode.to_string(),
        summary: o.summary.clone(),
        cot: o.cot.as_ref().map(CotView::from),
    }
}

/// Runs `op` on the blocking pool while holding the session lock, so requests
/// on one session execute one at a time.
async fn run_in_session<F>(
    state: Arc<AppState>,
    id: String,
    action: Action,
    op: F,
) -> Result<Json<OutcomeView>, ApiError>
where
    F: FnOnce(&Pipeline, &ImageRef, Option<&SegmentationOutcome>) -> thinkfirst_core::Result<SegmentationOutcome>
        + Send
        + 'static,
{
    let handle = state.session(&id)?;
    let mut session = handle.lock().await;
    let image = session.image.clone();
    let previous = session.history.last().map(|h| h.outcome.clone());
    let pipeline = state.pipeline.clone();
    let outcome = tokio::task::spawn_blocking(move || op(&pipeline, &image, previous.as_ref()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let outcome_id = Uuid::new_v4();
    let response = view(outcome_id, &outcome);
    let t = now();
    session.history.push(HistoryEntry {
        outcome_id,
        action,
        outcome,
        created_at: t,
    });
    session.updated_at = t;
    Ok(Json(response))
}

async fn segment(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<SegmentBody>,
) -> Result<Json<OutcomeView>, ApiError> {
    let task_mode: TaskMode = body.task_mode.as_deref().unwrap_or("standard").parse()?;
    let mode: PipelineMode = body.pipeline_mode.as_deref().unwrap_or("full").parse()?;
    run_in_session(state, id, Action::Segment, move |p, image, _| {
        p.segment(image, &body.query, &task_mode, mode)
    })
    .await
}

async fn refine(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<RefineBody>,
) -> Result<Json<OutcomeView>, ApiError> {
    let annotation: ControlAnnotation = body.annotation.parse()?;
    run_in_session(state, id, Action::Refine, move |p, image, previous| match previous {
        Some(prev) => p.refine(prev, image, &annotation),
        None => p.segment_with_control(image, &annotation),
    })
    .await
}

const PREVIEW_CHARS: usize = 80;

async fn history(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = state.session(&id)?;
    let session = handle.lock().await;
    let outcomes: Vec<_> = session
        .history
        .iter()
        .map(|h| {
            let preview: String = h.outcome.composed_prompt.chars().take(PREVIEW_CHARS).collect();
            json!({
                "outcome_id": h.outcome_id,
                "action": h.action,
                "mode": h.outcome.mode,
                "task_mode": h.outcome.task_mode.to_string(),
                "annotation": h.outcome.annotation.as_ref().map(|a| a.to_string()),
                "prompt_preview": preview,
                "mask_pixels": h.outcome.mask.count(),
                "created_at": h.created_at,
            })
        })
        .collect();
    Ok(Json(json!({
        "session_id": id,
        "width": session.image.width(),
        "height": session.image.height(),
        "created_at": session.created_at,
        "updated_at": session.updated_at,
        "outcomes": outcomes,
    })))
}
