//! Session host for speculative planning runs.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | liveness probe |
//! | POST | `/sessions` | start a run, returns `{"id", "status"}` |
//! | GET | `/sessions` | list sessions |
//! | GET | `/sessions/{id}` | status, event count, open windows |
//! | GET | `/sessions/{id}/metrics` | metrics; 409 while running |
//! | POST | `/sessions/{id}/interrupt` | user override, `{"result": "accepted" \| "stale"}` |
//! | POST | `/sessions/{id}/advance` | release instants of a paused clock |
//! | GET | `/sessions/{id}/log` | event log as line-delimited JSON |
//! | GET | `/sessions/{id}/events?from_seq=N` | websocket event stream, see [`wire`] |

pub mod api;
pub mod error;
pub mod session;
pub mod wire;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use specplan_core::{InterruptError, UserInterrupt};

pub use api::{AckResult, ClockSpec, CreateSession, InterruptAck, SessionMode, SessionStatus, SimulatedMode};
pub use error::ApiError;
pub use session::Session;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// When set, each session's event log is also written to
    /// `{log_dir}/{id}.jsonl`.
    pub log_dir: Option<PathBuf>,
}

#[derive(Clone, Default)]
pub struct AppState {
    config: ServiceConfig,
    sessions: Arc<RwLock<HashMap<String, Arc<Session>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            config,
            sessions: Arc::default(),
        }
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Starts a session from an already validated request.
    pub fn create(&self, request: CreateSession) -> Result<Arc<Session>, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::start(id.clone(), request, self.config.log_dir.as_deref())?;
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, session.clone());
        Ok(session)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/interrupt", post(interrupt))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request = CreateSession::from_json(&body)?;
    let session = app.create(request)?;
    let body = api::Created {
        id: session.id.clone(),
        status: session.status(),
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<api::Created>> {
    let sessions = app.sessions.read().expect("session map poisoned");
    let mut out: Vec<api::Created> = sessions
        .values()
        .map(|s| api::Created {
            id: s.id.clone(),
            status: s.status(),
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Json(out)
}

async fn session_info(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<api::SessionInfo>, ApiError> {
    Ok(Json(app.session(&id)?.info()))
}

async fn metrics(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<api::MetricsResponse>, ApiError> {
    Ok(Json(app.session(&id)?.metrics()?))
}

async fn interrupt(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<InterruptAck>, ApiError> {
    let session = app.session(&id)?;
    let value: serde_json::Value =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(None, format!("invalid JSON: {e}")))?;
    let ui: UserInterrupt = api::from_value(&value)?;
    if let Err(e) = ui.validate() {
        return Err(ApiError::bad_request(Some("content".into()), e.to_string()));
    }
    match session.interrupt(ui).await {
        Ok(()) => Ok(Json(InterruptAck {
            result: AckResult::Accepted,
            reason: None,
        })),
        Err(InterruptError::EmptyContent) => Err(ApiError::bad_request(
            Some("content".into()),
            InterruptError::EmptyContent.to_string(),
        )),
        Err(e) => Ok(Json(InterruptAck {
            result: AckResult::Stale,
            reason: Some(e.to_string()),
        })),
    }
}

async fn advance(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id)?;
    let req: api::Advance = if body.is_empty() {
        api::Advance { instants: 1 }
    } else {
        let value: serde_json::Value =
            serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(None, format!("invalid JSON: {e}")))?;
        api::from_value(&value)?
    };
    session.advance(req.instants)?;
    Ok(Json(json!({ "advanced": req.instants })))
}

async fn log(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let text = app.session(&id)?.log_text();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<api::StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_events(socket, session, q.from_seq)))
}

async fn stream_events(mut socket: WebSocket, session: Arc<Session>, mut sent: u64) {
    let mut progress = session.subscribe();
    loop {
        progress.borrow_and_update();
        let snap = session.snapshot(sent);
        for line in snap.lines {
            sent += 1;
            let frame = wire::frame(sent, &session.id, &line);
            if socket.send(Message::Text(frame.into())).await.is_err() {
                return;
            }
        }
        if let Some(status) = snap.finished {
            let end = wire::end_of_stream(&session.id, sent, status);
            let _ = socket.send(Message::Text(end.into())).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            _ = progress.changed() => {}
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
