//! JSON-over-HTTP labeling sessions. Each session owns a learner behind its
//! own lock; retraining runs on the blocking pool so one session never
//! stalls another.

pub mod api;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use alevs_core::Error;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use uuid::Uuid;

use api::{CreateResponse, CreateSession, ErrorBody, MetricsResponse, PoolResponse, QueryResponse, SubmitLabels, SubmitResponse};
use session::Session;

type SessionHandle = Arc<Mutex<Session>>;

#[derive(Debug, Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, SessionHandle>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().map(|s| s.len()).unwrap_or(0)
    }

    fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        let map = self.sessions.read().map_err(|_| ApiError::internal("session table poisoned"))?;
        map.get(id).cloned().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotPending(_) | Error::NoPendingQuery => StatusCode::CONFLICT,
            Error::IncompleteBatch { .. } | Error::AlreadyInSet(_) | Error::UnknownId(_) | Error::OutOfRange { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Io(_) | Error::Csv(_) | Error::Parse { .. } | Error::InvalidParameter(_) | Error::Empty(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

/// Runs `f` with the session locked, on the blocking pool.
async fn with_session<T, F>(handle: SessionHandle, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut guard = handle.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let Json(req) = body?;
    let id = Uuid::new_v4().to_string();
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || Session::create(sid, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let query = session.query();
    state
        .sessions
        .write()
        .map_err(|_| ApiError::internal("session table poisoned"))?
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(CreateResponse { session: id, query })))
}

/// Idempotent while no labels arrive; a session busy applying labels
/// answers 409.
async fn next_query(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<QueryResponse>, ApiError> {
    let handle = state.get(&id)?;
    let guard = match handle.try_lock() {
        Ok(g) => g,
        Err(TryLockError::WouldBlock) => {
            return Err(ApiError::new(StatusCode::CONFLICT, "labels are being applied; retry once they are in"))
        }
        Err(TryLockError::Poisoned(_)) => return Err(ApiError::internal("session lock poisoned")),
    };
    Ok(Json(guard.query()))
}

async fn submit_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SubmitLabels>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let Json(req) = body?;
    let handle = state.get(&id)?;
    let resp = with_session(handle, move |s| {
        s.submit(&req.labels)?;
        let latest = s.learner().and_then(|l| l.rows().last().cloned());
        Ok(SubmitResponse { latest, query: s.query() })
    })
    .await?;
    Ok(Json(resp))
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<MetricsResponse>, ApiError> {
    let handle = state.get(&id)?;
    Ok(Json(with_session(handle, |s| Ok(s.metrics())).await?))
}

async fn pool(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<PoolResponse>, ApiError> {
    let handle = state.get(&id)?;
    Ok(Json(with_session(handle, |s| Ok(s.pool())).await?))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let removed = state.sessions.write().map_err(|_| ApiError::internal("session table poisoned"))?.remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/pool", get(pool))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new())).await
}
