//! axum routes over [`Service`]. Handlers run the synchronous service on
//! the blocking pool; errors are `{code, message, detail}` bodies.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use reflect_core::model::{EntryId, Visibility};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::records::ParticipantRecord;
use crate::service::{ApiError, ApiResult, LoginRequest, ResponseSubmission, Service, TranscriptUpload};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Shared = Arc<Service>;

fn bearer(headers: &HeaderMap) -> ApiResult<String> {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_owned())
        .ok_or_else(|| ApiError::new(401, "unauthorized", "missing bearer token"))
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(v)| v)
        .map_err(|e| ApiError::new(400, "bad_request", e.body_text()))
}

/// Runs `f` on the blocking pool with the authenticated caller.
async fn as_caller<T, F>(svc: Shared, headers: HeaderMap, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Service, &ParticipantRecord) -> ApiResult<T> + Send + 'static,
{
    blocking(move || {
        let token = bearer(&headers)?;
        let caller = svc.authenticate(&token)?;
        f(&svc, &caller)
    })
    .await
}

async fn blocking<T, F>(f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(_) => ApiError::new(500, "internal", "request handler failed").into_response(),
    }
}

async fn login(State(svc): State<Shared>, b: Result<Json<LoginRequest>, JsonRejection>) -> Response {
    blocking(move || svc.login(&body(b)?)).await
}

async fn upload(State(svc): State<Shared>, headers: HeaderMap, b: Result<Json<TranscriptUpload>, JsonRejection>) -> Response {
    as_caller(svc, headers, move |s, c| s.upload_transcript(c, &body(b)?)).await
}

async fn today(State(svc): State<Shared>, headers: HeaderMap) -> Response {
    as_caller(svc, headers, |s, c| s.prompts_today(c)).await
}

async fn catch_up(State(svc): State<Shared>, headers: HeaderMap) -> Response {
    as_caller(svc, headers, |s, c| s.catch_up(c)).await
}

async fn respond(State(svc): State<Shared>, headers: HeaderMap, b: Result<Json<ResponseSubmission>, JsonRejection>) -> Response {
    as_caller(svc, headers, move |s, c| s.submit_response(c, &body(b)?)).await
}

#[derive(Debug, Deserialize)]
struct PartnerQuery {
    day: u32,
    meeting: Option<u32>,
}

async fn partner(State(svc): State<Shared>, headers: HeaderMap, q: Result<Query<PartnerQuery>, QueryRejection>) -> Response {
    as_caller(svc, headers, move |s, c| {
        let Ok(Query(q)) = q else {
            // The condition check comes first, even for malformed queries.
            if !c.participant.condition.is_structured() {
                return s.partner_reflections(c, 0, None);
            }
            return Err(ApiError::new(400, "bad_request", "query parameter `day` is required"));
        };
        s.partner_reflections(c, q.day, q.meeting)
    })
    .await
}

#[derive(Debug, Deserialize)]
struct VisibilityBody {
    visibility: Visibility,
}

async fn visibility(
    State(svc): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<String>,
    b: Result<Json<VisibilityBody>, JsonRejection>,
) -> Response {
    as_caller(svc, headers, move |s, c| s.set_visibility(c, &EntryId::new(id), body(b)?.visibility)).await
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    since: Option<DateTime<Utc>>,
}

async fn notifications(State(svc): State<Shared>, headers: HeaderMap, q: Result<Query<SinceQuery>, QueryRejection>) -> Response {
    as_caller(svc, headers, move |s, c| {
        let Query(q) = q.map_err(|e| ApiError::new(400, "bad_request", e.body_text()))?;
        s.notifications(c, q.since)
    })
    .await
}

async fn mark_read(State(svc): State<Shared>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    as_caller(svc, headers, move |s, c| s.mark_read(c, &id)).await
}

async fn dashboard(State(svc): State<Shared>, headers: HeaderMap) -> Response {
    as_caller(svc, headers, |s, c| s.dashboard(c)).await
}

async fn health(State(svc): State<Shared>) -> Response {
    blocking(move || Ok(svc.health())).await
}

pub fn router(svc: Shared, static_dir: Option<PathBuf>) -> Router {
    // Leave room above the transcript cap so oversize uploads reach the
    // handler and get a structured 413.
    let limit = svc.config().transcript_max_bytes.saturating_mul(2) + 64 * 1024;
    let api = Router::new()
        .route("/sessions", post(login))
        .route("/transcripts", post(upload))
        .route("/prompts/today", get(today))
        .route("/prompts/catch-up", get(catch_up))
        .route("/responses", post(respond))
        .route("/partner-reflections", get(partner))
        .route("/entries/{id}/visibility", post(visibility))
        .route("/notifications", get(notifications))
        .route("/notifications/{id}/read", post(mark_read))
        .route("/dashboard", get(dashboard))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C, running a scheduler tick every `tick_every`.
pub async fn serve(svc: Shared, addr: SocketAddr, static_dir: Option<PathBuf>, tick_every: Duration) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let ticker = {
        let svc = svc.clone();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(tick_every);
            loop {
                interval.tick().await;
                let svc = svc.clone();
                let res = tokio::task::spawn_blocking(move || svc.tick()).await;
                if let Ok(Err(e)) = res {
                    eprintln!("{}", serde_json::json!({"level": "error", "msg": "tick failed", "error": e.to_string()}));
                }
            }
        })
    };
    eprintln!("{}", serde_json::json!({"level": "info", "msg": "listening", "addr": addr.to_string()}));
    let result = axum::serve(listener, router(svc, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    ticker.abort();
    result
}
