//! HTTP and WebSocket routes.

use std::future::Future;
use std::path::PathBuf;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lifespace_core::chat::{ChatError, ChatOutcome, ChatSession, SessionId, TranscriptEntry};
use lifespace_core::snapshot::SnapshotError;
use lifespace_core::AgentId;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::engine::{Engine, EngineError, Frame, SnapshotInfo, StateView, ViewMode};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub retryable: bool,
}

pub struct ApiError(EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            EngineError::NotStarted => StatusCode::SERVICE_UNAVAILABLE,
            EngineError::AlreadyStarted => StatusCode::CONFLICT,
            EngineError::Chat(c) => match c {
                ChatError::UnknownAgent(_) | ChatError::UnknownSession(_) => StatusCode::NOT_FOUND,
                ChatError::Closed(_) | ChatError::AlreadyClosed(_) => StatusCode::CONFLICT,
                ChatError::EmptyText => StatusCode::BAD_REQUEST,
                ChatError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
                ChatError::Sim(_) => StatusCode::UNPROCESSABLE_ENTITY,
            },
            EngineError::Snapshot(SnapshotError::Io { .. }) => StatusCode::BAD_REQUEST,
            EngineError::Snapshot(SnapshotError::Corrupt { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let retryable = matches!(&self.0, EngineError::Chat(c) if c.is_retryable());
        let body = ErrorBody {
            error: self.0.to_string(),
            retryable,
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModeBody {
    pub mode: ViewMode,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OpenSession {
    pub agent: AgentId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionOpened {
    pub session: SessionId,
    pub agent: AgentId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionClosed {
    pub session: SessionId,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotPath {
    pub path: PathBuf,
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/v1/state", get(state))
        .route("/v1/mode", get(current_mode).post(set_mode))
        .route("/v1/sessions", post(open_session))
        .route("/v1/sessions/{id}", get(session_info).delete(close_session))
        .route("/v1/sessions/{id}/messages", post(send_message))
        .route("/v1/snapshot", post(save_snapshot))
        .route("/v1/snapshot/load", post(load_snapshot))
        .route("/v1/events", get(events))
        .with_state(engine)
}

/// Serves `engine` on `listener` until `shutdown` resolves.
pub async fn serve(
    engine: Engine,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn state(State(engine): State<Engine>) -> Result<Json<StateView>, ApiError> {
    Ok(Json(engine.get_state()?))
}

async fn current_mode(State(engine): State<Engine>) -> Json<ModeBody> {
    Json(ModeBody { mode: engine.mode() })
}

async fn set_mode(State(engine): State<Engine>, Json(body): Json<ModeBody>) -> Json<ModeBody> {
    Json(ModeBody {
        mode: engine.set_mode(body.mode),
    })
}

async fn open_session(
    State(engine): State<Engine>,
    Json(body): Json<OpenSession>,
) -> Result<(StatusCode, Json<SessionOpened>), ApiError> {
    let session = engine.open_session(&body.agent)?;
    Ok((
        StatusCode::CREATED,
        Json(SessionOpened {
            session,
            agent: body.agent,
        }),
    ))
}

async fn session_info(State(engine): State<Engine>, Path(id): Path<String>) -> Result<Json<ChatSession>, ApiError> {
    Ok(Json(engine.session_info(&SessionId(id))?))
}

async fn send_message(
    State(engine): State<Engine>,
    Path(id): Path<String>,
    Json(body): Json<MessageBody>,
) -> Result<Json<ChatOutcome>, ApiError> {
    let outcome = tokio::task::spawn_blocking(move || engine.send_message(&SessionId(id), &body.text))
        .await
        .expect("chat task panicked")?;
    Ok(Json(outcome))
}

async fn close_session(State(engine): State<Engine>, Path(id): Path<String>) -> Result<Json<SessionClosed>, ApiError> {
    let session = SessionId(id);
    let transcript = engine.close_session(&session)?;
    Ok(Json(SessionClosed { session, transcript }))
}

async fn save_snapshot(State(engine): State<Engine>, Json(body): Json<SnapshotPath>) -> Result<Json<SnapshotInfo>, ApiError> {
    let info = tokio::task::spawn_blocking(move || engine.save_snapshot(&body.path))
        .await
        .expect("snapshot task panicked")?;
    Ok(Json(info))
}

async fn load_snapshot(State(engine): State<Engine>, Json(body): Json<SnapshotPath>) -> Result<Json<SnapshotInfo>, ApiError> {
    let info = tokio::task::spawn_blocking(move || engine.load_snapshot(&body.path))
        .await
        .expect("snapshot task panicked")?;
    Ok(Json(info))
}

async fn events(ws: WebSocketUpgrade, Query(q): Query<Since>, State(engine): State<Engine>) -> Response {
    ws.on_upgrade(move |socket| stream(engine, socket, q.since))
}

async fn send_json(socket: &mut WebSocket, value: &impl Serialize) -> bool {
    let text = serde_json::to_string(value).expect("frames serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

/// Backlog first, then live frames. Subscribing before reading the backlog
/// and skipping seqs already sent gives exactly-once delivery.
async fn stream(engine: Engine, mut socket: WebSocket, since: u64) {
    let mut rx = engine.subscribe();
    let mut last = since;
    for event in engine.events_since(since) {
        if !send_json(&mut socket, &engine.envelope(&event)).await {
            return;
        }
        last = event.seq;
    }
    loop {
        tokio::select! {
            frame = rx.recv() => {
                let ok = match frame {
                    Ok(Frame::Event(event)) => {
                        if event.seq <= last {
                            continue;
                        }
                        last = event.seq;
                        send_json(&mut socket, &engine.envelope(&event)).await
                    }
                    Ok(Frame::Expression { tick, agents }) => {
                        send_json(&mut socket, &json!({"expression": {"tick": tick, "agents": agents}})).await
                    }
                    Ok(Frame::ModeChanged(change)) => {
                        send_json(&mut socket, &json!({"mode_changed": change})).await
                    }
                    Ok(Frame::Reset) | Err(RecvError::Closed) => {
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                    Err(RecvError::Lagged(missed)) => {
                        tracing::warn!(missed, last, "subscriber fell behind, disconnecting");
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                };
                if !ok {
                    return;
                }
            }
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            }
        }
    }
}
