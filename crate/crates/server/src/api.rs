//! REST surface over the session engine, dashboard and knowledge base.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashtalk_core::catalog::{CatalogSource, RefreshOutcome};
use dashtalk_core::parser::ExtractionResult;
use dashtalk_core::schema::{data_request_params, DataRequest, TimeRange, WidgetSpec};
use dashtalk_core::session::{
    ClarificationRequest, Phase, SessionEngine, SessionError, SessionState, TranscriptEntry,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mock::MetricData;
use crate::store::{DashboardStore, SessionStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeStatus {
    Ok,
    ClarificationNeeded,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub status: EnvelopeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub payload: Value,
}

/// What clients see of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub draft: ExtractionResult,
    pub pending: Vec<ClarificationRequest>,
    pub time_range: TimeRange,
    pub transcript: Vec<TranscriptEntry>,
    pub preview_ready: bool,
}

impl From<&SessionState> for SessionView {
    fn from(s: &SessionState) -> Self {
        Self {
            session_id: s.session_id.clone(),
            phase: s.phase,
            draft: s.draft.clone(),
            pending: s.pending.iter().cloned().collect(),
            time_range: s.effective_time_range(),
            transcript: s.transcript.clone(),
            preview_ready: s.phase == Phase::Previewable,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnswerBody {
    pub request_id: String,
    pub choice: String,
}

/// Exactly one of the three message kinds.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageBody {
    Query(String),
    Answer(AnswerBody),
    TimeRange(TimeRange),
}

/// Fetches preview data from the monitoring API's metric-data endpoint.
#[derive(Debug, Clone)]
pub struct PreviewSource {
    base: url::Url,
    token: Option<String>,
    http: reqwest::Client,
}

impl PreviewSource {
    pub fn new(base: url::Url, token: Option<String>) -> Self {
        Self {
            base,
            token,
            http: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(10))
                .build()
                .expect("reqwest client builds"),
        }
    }

    pub async fn fetch(&self, request: &DataRequest) -> Result<Vec<MetricData>, String> {
        let DataRequest::Metrics { queries } = request else {
            return Ok(Vec::new());
        };
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            let mut url = self.base.clone();
            url.set_path("/api/metric-data");
            url.query_pairs_mut().extend_pairs(q.query_pairs());
            let mut req = self.http.get(url);
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            let resp = req.send().await.map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("metric-data returned HTTP {}", resp.status().as_u16()));
            }
            out.push(resp.json().await.map_err(|e| e.to_string())?);
        }
        Ok(out)
    }
}

pub struct AppState {
    pub engine: Arc<SessionEngine>,
    pub sessions: SessionStore,
    pub dashboard: DashboardStore,
    pub catalog_source: Option<Arc<dyn CatalogSource>>,
    pub preview: Option<PreviewSource>,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    session_id: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            session_id: None,
        }
    }

    fn in_session(mut self, id: &str) -> Self {
        self.session_id = Some(id.to_string());
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Phase { .. } | SessionError::OutOfOrder { .. } => StatusCode::CONFLICT,
            SessionError::InvalidChoice { .. } | SessionError::Parse(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SessionError::Spec(dashtalk_core::schema::SpecError::InvalidTimeRange(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SessionError::Spec(_) => StatusCode::INTERNAL_SERVER_ERROR,
            SessionError::Catalog(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Capacity(_) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "capacity", e.to_string())
            }
            StoreError::DuplicateWidget(_) => Self::new(StatusCode::CONFLICT, "duplicate_widget", e.to_string()),
            StoreError::Io { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let envelope = ApiEnvelope {
            status: EnvelopeStatus::Error,
            session_id: self.session_id,
            payload: json!({ "code": self.code, "message": self.message }),
        };
        (self.status, Json(envelope)).into_response()
    }
}

type ApiResult = Result<(StatusCode, Json<ApiEnvelope>), ApiError>;

fn ok(session_id: Option<&str>, payload: Value) -> ApiResult {
    Ok((
        StatusCode::OK,
        Json(ApiEnvelope {
            status: EnvelopeStatus::Ok,
            session_id: session_id.map(str::to_string),
            payload,
        }),
    ))
}

fn session_envelope(state: &SessionState) -> ApiEnvelope {
    let status = if state.pending.is_empty() {
        EnvelopeStatus::Ok
    } else {
        EnvelopeStatus::ClarificationNeeded
    };
    ApiEnvelope {
        status,
        session_id: Some(state.session_id.clone()),
        payload: serde_json::to_value(SessionView::from(state)).expect("view serializes"),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/preview", get(get_preview))
        .route("/api/sessions/{id}/confirm", post(confirm))
        .route("/api/dashboard", get(get_dashboard))
        .route("/api/kb/refresh", post(refresh_kb))
        .with_state(state)
}

async fn create_session(State(app): State<Arc<AppState>>) -> ApiResult {
    let session = app.engine.new_session();
    let envelope = session_envelope(&session);
    app.sessions.insert(session, app.engine.clock().now())?;
    Ok((StatusCode::CREATED, Json(envelope)))
}

fn lookup(app: &AppState, id: &str) -> Result<crate::store::SessionSlot, ApiError> {
    app.sessions
        .get(id, app.engine.clock().now())
        .ok_or_else(|| ApiError::not_found(id))
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> ApiResult {
    let slot = lookup(&app, &id)?;
    let body: MessageBody = serde_json::from_value(body).map_err(|e| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            format!("expected one of query, answer or time_range: {e}"),
        )
        .in_session(&id)
    })?;
    let mut state = slot.lock().await;
    let result = match body {
        MessageBody::Query(q) => app.engine.submit_query(&mut state, &q).await,
        MessageBody::Answer(a) => app
            .engine
            .answer_clarification(&mut state, &a.request_id, &a.choice),
        MessageBody::TimeRange(t) => app.engine.set_time_range(&mut state, t.last_minutes),
    };
    result.map_err(|e| ApiError::from(e).in_session(&id))?;
    Ok((StatusCode::OK, Json(session_envelope(&state))))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreviewPayload {
    pub spec: WidgetSpec,
    pub request: DataRequest,
    pub data: Vec<MetricData>,
    /// Set when preview data could not be fetched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_warning: Option<String>,
}

async fn get_preview(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = lookup(&app, &id)?;
    let spec = {
        let state = slot.lock().await;
        app.engine
            .preview(&state)
            .map_err(|e| ApiError::from(e).in_session(&id))?
    };
    let request = data_request_params(&spec, app.engine.clock().now());
    let (data, data_warning) = match &app.preview {
        Some(source) => match source.fetch(&request).await {
            Ok(data) => (data, None),
            Err(e) => {
                tracing::warn!(error = %e, "preview data unavailable");
                (Vec::new(), Some(format!("preview data unavailable: {e}")))
            }
        },
        None => (Vec::new(), Some("no monitoring API configured".to_string())),
    };
    let payload = PreviewPayload {
        spec,
        request,
        data,
        data_warning,
    };
    ok(Some(&id), serde_json::to_value(payload).expect("preview serializes"))
}

async fn confirm(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = lookup(&app, &id)?;
    let mut state = slot.lock().await;
    let mut next = state.clone();
    let spec = app
        .engine
        .confirm(&mut next)
        .map_err(|e| ApiError::from(e).in_session(&id))?;
    app.dashboard
        .add(spec.clone())
        .map_err(|e| ApiError::from(e).in_session(&id))?;
    *state = next;
    ok(Some(&id), json!({ "widget": spec }))
}

async fn get_dashboard(State(app): State<Arc<AppState>>) -> ApiResult {
    ok(None, json!({ "widgets": app.dashboard.widgets() }))
}

async fn refresh_kb(State(app): State<Arc<AppState>>) -> ApiResult {
    let Some(source) = &app.catalog_source else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no_catalog_source",
            "no monitoring API is configured",
        ));
    };
    let kb = app.engine.knowledge_base();
    let payload = match kb.refresh(source.as_ref()).await {
        RefreshOutcome::Installed { fetched_at } => {
            json!({ "outcome": "installed", "fetched_at": fetched_at })
        }
        RefreshOutcome::InstalledPartial { failed } => json!({
            "outcome": "installed_partial",
            "failed": failed.iter().map(|k| k.path()).collect::<Vec<_>>(),
            "fetched_at": kb.snapshot().fetched_at,
        }),
        RefreshOutcome::StaleRetained { reason } => json!({
            "outcome": "stale_retained",
            "reason": reason,
            "fetched_at": kb.snapshot().fetched_at,
        }),
    };
    ok(None, payload)
}

/// Serves the API on `addr` until the task is dropped. Returns the bound
/// address (useful with port 0) and the server task.
pub async fn spawn(
    state: Arc<AppState>,
    addr: SocketAddr,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "API server stopped");
        }
    });
    Ok((addr, handle))
}
