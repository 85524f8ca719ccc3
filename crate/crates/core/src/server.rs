//! JSON-over-HTTP access to sessions.
//!
//! Sessions open and analyse in the background; reads never wait for a
//! shadow pipeline and report pending suggestions instead. Mutations run on
//! the blocking pool while holding the session lock, then re-run the shadows
//! outside of it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::corpus::Dataset;
use crate::engine::LatencyConfig;
use crate::plan::{PipelinePlan, PlanError};
use crate::session::{Session, SessionError};
use crate::shadow::{PipelineKind, ShadowConfig, ShadowKind};

/// Server-wide settings and the session table.
pub struct AppState {
    data: Arc<Dataset>,
    latency: LatencyConfig,
    config: ShadowConfig,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(data: Dataset, latency: LatencyConfig, config: ShadowConfig) -> Arc<AppState> {
        Arc::new(AppState {
            data: Arc::new(data),
            latency,
            config,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        })
    }
}

enum Slot {
    Starting,
    Ready(Box<Session>),
    Failed(String),
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    InvalidPlan(PlanError),
    Conflict(String),
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, json!({"error": format!("{what} not found")})),
            ApiError::InvalidPlan(e) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "invalid plan", "errors": [{"message": e.to_string()}]}),
            ),
            ApiError::Conflict(msg) => (StatusCode::CONFLICT, json!({"error": msg})),
            ApiError::BadRequest(msg) => (StatusCode::BAD_REQUEST, json!({"error": msg})),
            ApiError::Internal(msg) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": msg})),
        };
        (status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownSuggestion(id) => ApiError::NotFound(format!("suggestion `{id}`")),
            SessionError::NotReady { .. } | SessionError::Stale(_) => ApiError::Conflict(e.to_string()),
            SessionError::Plan(p) => ApiError::InvalidPlan(p),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/suggestions", get(get_suggestions))
        .route("/sessions/{id}/suggestions/{sid}/apply", post(apply_suggestion))
        .route("/sessions/{id}/suggestions/{sid}/dismiss", post(dismiss_suggestion))
        .route("/sessions/{id}/plan", put(update_plan))
        .route("/sessions/{id}/explanations/{sid}", get(get_explanations))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Plan given inline as a JSON document, or by bundled name.
fn parse_plan(value: &Value) -> Result<PipelinePlan, ApiError> {
    let plan = match value {
        Value::String(name) => name
            .parse::<PipelineKind>()
            .map(PipelineKind::plan)
            .map_err(ApiError::BadRequest)?,
        other => PipelinePlan::parse(&other.to_string()).map_err(ApiError::InvalidPlan)?,
    };
    plan.validate().map_err(ApiError::InvalidPlan)?;
    Ok(plan)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn slot(state: &AppState, id: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
    state
        .sessions
        .lock()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("session `{id}`")))
}

/// Runs `f` on the ready session behind `slot`.
fn with_session<T>(slot: &Mutex<Slot>, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
    match &mut *slot.lock() {
        Slot::Ready(s) => f(s),
        Slot::Starting => Err(ApiError::Conflict("session is still starting".into())),
        Slot::Failed(e) => Err(ApiError::Conflict(format!("session failed to start: {e}"))),
    }
}

/// Re-runs every shadow against the session's current run without holding
/// the lock while they execute.
fn analyze_in_background(slot: Arc<Mutex<Slot>>) {
    tokio::task::spawn_blocking(move || {
        let job = match &mut *slot.lock() {
            Slot::Ready(s) => s.snapshot(&ShadowKind::ALL),
            _ => return,
        };
        let reports = job.run();
        if let Slot::Ready(s) = &mut *slot.lock() {
            s.complete(reports);
        }
    });
}

#[derive(Deserialize)]
struct CreateSession {
    plan: Value,
    #[serde(default)]
    corpus_dir: Option<PathBuf>,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> Response {
    let plan = match parse_plan(&body.plan) {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let entry = Arc::new(Mutex::new(Slot::Starting));
    state.sessions.lock().insert(id.clone(), Arc::clone(&entry));
    let st = Arc::clone(&state);
    let sid = id.clone();
    tokio::task::spawn_blocking(move || {
        let data = match &body.corpus_dir {
            Some(dir) => match Dataset::load(dir) {
                Ok(d) => Arc::new(d),
                Err(e) => {
                    *entry.lock() = Slot::Failed(e.to_string());
                    return;
                }
            },
            None => Arc::clone(&st.data),
        };
        match Session::open(&sid, plan, data, st.config.clone(), st.latency) {
            Ok(s) => {
                *entry.lock() = Slot::Ready(Box::new(s));
                analyze_in_background(entry);
            }
            Err(e) => *entry.lock() = Slot::Failed(e.to_string()),
        }
    });
    (StatusCode::CREATED, Json(json!({"session_id": id}))).into_response()
}

fn session_view(slot: &Slot, id: &str) -> Value {
    match slot {
        Slot::Starting => json!({"session_id": id, "status": "starting"}),
        Slot::Failed(e) => json!({"session_id": id, "status": "failed", "error": e}),
        Slot::Ready(s) => json!({
            "session_id": id,
            "status": "ready",
            "plan": s.plan(),
            "plan_fingerprint": s.run().plan_fingerprint().to_string(),
            "metrics": s.run().metrics,
            "history": s.history(),
            "shadows": s.shadow_states(),
            "analyzing": s.analyzing(),
            "maintenance": s.last_maintenance(),
        }),
    }
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = slot(&state, &id)?;
    let view = session_view(&slot.lock(), &id);
    Ok(Json(view))
}

async fn get_suggestions(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = slot(&state, &id)?;
    let guard = slot.lock();
    Ok(Json(match &*guard {
        Slot::Ready(s) => json!({
            "analyzing": s.analyzing(),
            "shadows": s.shadow_states(),
            "suggestions": s.suggestions(),
        }),
        Slot::Starting => json!({"analyzing": true, "suggestions": []}),
        Slot::Failed(e) => json!({"analyzing": false, "error": e, "suggestions": []}),
    }))
}

async fn apply_suggestion(State(state): State<Arc<AppState>>, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let slot = slot(&state, &id)?;
    let s2 = Arc::clone(&slot);
    let applied = blocking(move || with_session(&s2, |s| Ok(s.apply(&sid)?))).await?;
    analyze_in_background(slot);
    Ok(Json(serde_json::to_value(applied).map_err(|e| ApiError::Internal(e.to_string()))?))
}

async fn dismiss_suggestion(
    State(state): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, String)>,
) -> ApiResult {
    let slot = slot(&state, &id)?;
    let dismissed = with_session(&slot, |s| Ok(s.dismiss(&sid)?.clone()))?;
    Ok(Json(json!({"ok": true, "suggestion": dismissed})))
}

#[derive(Deserialize)]
struct UpdatePlan {
    plan: Value,
}

async fn update_plan(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<UpdatePlan>,
) -> ApiResult {
    let slot = slot(&state, &id)?;
    let plan = parse_plan(&body.plan)?;
    let s2 = Arc::clone(&slot);
    let (report, metrics) = blocking(move || {
        with_session(&s2, |s| {
            let report = s.update_plan(plan)?;
            Ok((report, s.run().metrics.clone()))
        })
    })
    .await?;
    analyze_in_background(slot);
    Ok(Json(json!({
        "policy": report.policy,
        "maintenance": report,
        "metrics": metrics,
    })))
}

async fn get_explanations(
    State(state): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, String)>,
) -> ApiResult {
    let slot = slot(&state, &id)?;
    let tuples = with_session(&slot, |s| Ok(s.explanations(&sid)?.to_vec()))?;
    Ok(Json(json!({"suggestion_id": sid, "explanation": tuples})))
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, static_dir)).await
}
