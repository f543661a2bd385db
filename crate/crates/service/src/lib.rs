//! HTTP service for the deferred-case review workflow and live metrics.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | start a session `{participant_id, seed}` |
//! | GET | `/sessions/{id}/next` | current case; guidance only after disagreement |
//! | POST | `/sessions/{id}/cases/{case}/initial` | blind decision `{prediction}` |
//! | POST | `/sessions/{id}/cases/{case}/final` | decision after guidance |
//! | GET | `/metrics` | full report plus pilot analysis |
//! | GET | `/metrics/reliability?source=&gamma=` | reliability rows |
//! | GET | `/metrics/arc?rank_source=&clf_source=` | accuracy-rejection curve |
//!
//! Errors are `{"error": <code>, "message": <text>}`.

pub mod log;
pub mod workflow;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gdefer_core::config::RunConfig;
use gdefer_core::dataset::DatasetManifest;
use gdefer_core::report::reliability_for;
use gdefer_core::{BinaryLabel, Source};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;

pub use log::{replay_log, EventLog, ReplayError};
pub use workflow::{Deployment, InitialOutcome, NextCase, Phase, Sessions, WorkflowError};

/// Shared state: the read-only deployment and the lock-guarded sessions.
#[derive(Debug)]
pub struct AppState {
    pub deployment: Deployment,
    pub sessions: RwLock<Sessions>,
}

impl AppState {
    /// Builds the deployment and, when `log_path` is given, resumes its log.
    pub fn new(manifest: DatasetManifest, config: RunConfig, log_path: Option<PathBuf>) -> Result<Self, WorkflowError> {
        let deployment = Deployment::new(manifest, config)?;
        let (log, existing) = match log_path {
            Some(path) => EventLog::open(path)?,
            None => (EventLog::detached(), Vec::new()),
        };
        let sessions = Sessions::new(log, existing, &deployment)?;
        Ok(Self {
            deployment,
            sessions: RwLock::new(sessions),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        use WorkflowError as W;
        let message = e.to_string();
        let (status, code) = match e {
            W::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            W::UnknownCase(_) => (StatusCode::NOT_FOUND, "unknown_case"),
            W::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
            W::DuplicateDecision(_) => (StatusCode::CONFLICT, "duplicate_decision"),
            W::GuidanceNotShown => (StatusCode::CONFLICT, "guidance_not_shown"),
            W::NoDeferredCases => (StatusCode::CONFLICT, "no_deferred_cases"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_case))
        .route("/sessions/{id}/cases/{case}/initial", post(initial_decision))
        .route("/sessions/{id}/cases/{case}/final", post(final_decision))
        .route("/metrics", get(metrics))
        .route("/metrics/reliability", get(reliability))
        .route("/metrics/arc", get(arc))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    participant_id: String,
    #[serde(default)]
    seed: u64,
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(body) = body?;
    if body.participant_id.trim().is_empty() {
        return Err(ApiError::bad_request("participant_id must not be empty"));
    }
    let session = state
        .sessions
        .write()
        .await
        .create(&state.deployment, body.participant_id, body.seed)?;
    tracing::info!(session = %session.session_id, cases = session.order.len(), "session created");
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": session.session_id,
            "participant_id": session.participant_id,
            "total": session.order.len(),
        })),
    ))
}

async fn next_case(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let next = state.sessions.read().await.next(&state.deployment, &id)?;
    Ok(Json(match next {
        NextCase::Done { total } => json!({ "done": true, "total": total }),
        NextCase::Case {
            case_id,
            report_text,
            position,
            total,
            phase,
            guidance,
        } => {
            let mut body = json!({
                "done": false,
                "case_id": case_id,
                "report_text": report_text,
                "position": position,
                "total": total,
                "phase": phase,
            });
            if let Some(g) = guidance {
                body["guidance"] = json!(g);
            }
            body
        }
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Decision {
    prediction: BinaryLabel,
}

async fn initial_decision(
    State(state): State<Shared>,
    Path((id, case)): Path<(String, String)>,
    body: Result<Json<Decision>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(body) = body?;
    let outcome = state
        .sessions
        .write()
        .await
        .submit_initial(&state.deployment, &id, &case, body.prediction)?;
    Ok(Json(match outcome {
        InitialOutcome::Advance => json!({ "advance": true }),
        InitialOutcome::ShowGuidance(g) => json!({ "advance": false, "guidance": g }),
    }))
}

async fn final_decision(
    State(state): State<Shared>,
    Path((id, case)): Path<(String, String)>,
    body: Result<Json<Decision>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(body) = body?;
    state
        .sessions
        .write()
        .await
        .submit_final(&state.deployment, &id, &case, body.prediction)?;
    Ok(Json(json!({ "advance": true })))
}

fn unavailable(state: &AppState) -> ApiError {
    let message = state.deployment.base_report.as_ref().err().cloned().unwrap_or_default();
    if state.deployment.unlabeled {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unlabeled_dataset", message)
    } else {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

async fn metrics(State(state): State<Shared>) -> Result<Json<Value>, ApiError> {
    let Ok(base) = &state.deployment.base_report else {
        return Err(unavailable(&state));
    };
    let mut report = base.clone();
    report.pilot = state.sessions.read().await.analysis(&state.deployment)?;
    Ok(Json(json!(report)))
}

fn parse_source(value: Option<&str>, default: Source) -> Result<Source, ApiError> {
    value.map_or(Ok(default), |s| s.parse().map_err(ApiError::bad_request))
}

#[derive(Deserialize)]
struct ReliabilityQuery {
    source: Option<String>,
    gamma: Option<f64>,
}

async fn reliability(
    State(state): State<Shared>,
    query: Result<Query<ReliabilityQuery>, QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(q) = query?;
    let d = &state.deployment;
    let source = parse_source(q.source.as_deref(), Source::Combined)?;
    let gamma = q.gamma.unwrap_or(d.config.calibration.gamma);
    if !(0.0..=1.0).contains(&gamma) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "gamma_range",
            format!("gamma must lie in [0, 1], got {gamma}"),
        ));
    }
    if d.base_report.is_err() {
        return Err(unavailable(&state));
    }
    let rows = reliability_for(&d.manifest, &d.config, source, gamma)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "source_unavailable", e.to_string()))?;
    Ok(Json(json!({ "source": source, "gamma": gamma, "rows": rows })))
}

#[derive(Deserialize)]
struct ArcQuery {
    rank_source: Option<String>,
    clf_source: Option<String>,
}

async fn arc(
    State(state): State<Shared>,
    query: Result<Query<ArcQuery>, QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(q) = query?;
    let d = &state.deployment;
    let rank = parse_source(q.rank_source.as_deref(), d.config.deferral.rank_source)?;
    let clf = parse_source(q.clf_source.as_deref(), d.config.deferral.classification_source)?;
    let Ok(report) = &d.base_report else {
        return Err(unavailable(&state));
    };
    let curve = report.curve(rank, clf).ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "source_unavailable",
            format!("no curve ranking on {rank} and classifying on {clf}"),
        )
    })?;
    Ok(Json(json!(curve)))
}
