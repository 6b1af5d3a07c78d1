use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot};

use crate::protocol::*;
use crate::session::{self, Command, Handle, Request};
use crate::{ServiceConfig, PROTOCOL_SCHEMA};

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: Arc<ServiceConfig>,
    sessions: Mutex<BTreeMap<String, Arc<Handle>>>,
    /// Sessions being built; they count against capacity.
    pending: Mutex<usize>,
    next_session: AtomicU64,
    next_command: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config: Arc::new(config),
                sessions: Mutex::new(BTreeMap::new()),
                pending: Mutex::new(0),
                next_session: AtomicU64::new(1),
                next_command: AtomicU64::new(1),
            }),
        }
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("no session {id:?}")))
    }

    fn live_sessions(&self) -> usize {
        let sessions = self.inner.sessions.lock().unwrap();
        sessions.values().filter(|h| matches!(h.phase(), Phase::Paused | Phase::Running)).count()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(status).delete(close))
        .route("/sessions/{id}/context", post(context))
        .route("/sessions/{id}/plan", post(plan))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/record", get(record))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}

struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl From<JsonRejection> for Failure {
    fn from(e: JsonRejection) -> Self {
        Failure(ApiError::new(ErrorCode::InvalidRequest, e.body_text()))
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { error: self.0 })).into_response()
    }
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], PROTOCOL_SCHEMA)
}

async fn create(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionStatus>), Failure> {
    let Json(req) = body?;
    {
        let mut pending = state.inner.pending.lock().unwrap();
        let cap = state.inner.config.capacity;
        if state.live_sessions() + *pending >= cap {
            return Err(ApiError::new(
                ErrorCode::CapacityExceeded,
                format!("server capacity of {cap} session(s) in use"),
            )
            .into());
        }
        *pending += 1;
    }
    let id = format!("s{}", state.inner.next_session.fetch_add(1, Ordering::Relaxed));
    let built = session::spawn(id.clone(), req, state.inner.config.clone()).await;
    let mut pending = state.inner.pending.lock().unwrap();
    *pending -= 1;
    let handle = Arc::new(built?);
    let status = handle.status.lock().unwrap().clone();
    state.inner.sessions.lock().unwrap().insert(id, handle);
    Ok((StatusCode::CREATED, Json(status)))
}

async fn list(State(state): State<AppState>) -> Json<Vec<SessionStatus>> {
    let sessions = state.inner.sessions.lock().unwrap();
    Json(sessions.values().map(|h| h.status.lock().unwrap().clone()).collect())
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionStatus>, Failure> {
    let handle = state.handle(&id)?;
    let status = handle.status.lock().unwrap().clone();
    Ok(Json(status))
}

async fn command(state: &AppState, id: &str, request: Request) -> Result<Acked, Failure> {
    let handle = state.handle(id)?;
    let (reply, rx) = oneshot::channel();
    let command_id = state.inner.next_command.fetch_add(1, Ordering::Relaxed);
    handle
        .commands
        .send(Command::Op { id: command_id, request, reply })
        .map_err(|_| ApiError::new(ErrorCode::NotFound, format!("session {id:?} has ended")))?;
    let ack = rx.await.map_err(|_| ApiError::new(ErrorCode::Internal, "session loop stopped"))?;
    Ok(Acked(ack))
}

/// Command reply: the ack itself, with the HTTP status of its error if any.
struct Acked(CommandAck);

impl IntoResponse for Acked {
    fn into_response(self) -> Response {
        let status = match &self.0.error {
            None => StatusCode::OK,
            Some(e) => StatusCode::from_u16(e.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
        };
        (status, Json(self.0)).into_response()
    }
}

async fn context(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ContextRequest>, JsonRejection>,
) -> Result<Acked, Failure> {
    let Json(req) = body?;
    command(&state, &id, Request::Context(req.text)).await
}

async fn plan(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<PlanRequest>, JsonRejection>,
) -> Result<Acked, Failure> {
    let Json(req) = body?;
    command(&state, &id, Request::Plan(req.labels)).await
}

async fn pause(State(state): State<AppState>, Path(id): Path<String>) -> Result<Acked, Failure> {
    command(&state, &id, Request::Pause).await
}

async fn resume(State(state): State<AppState>, Path(id): Path<String>) -> Result<Acked, Failure> {
    command(&state, &id, Request::Resume).await
}

async fn advance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> Result<Acked, Failure> {
    let Json(req) = body?;
    command(&state, &id, Request::Advance(req.steps)).await
}

async fn close(State(state): State<AppState>, Path(id): Path<String>) -> Result<Acked, Failure> {
    let ack = command(&state, &id, Request::Close).await?;
    if ack.0.ok {
        state.inner.sessions.lock().unwrap().remove(&id);
    }
    Ok(ack)
}

/// The finished episode as newline-delimited JSON.
async fn record(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, Failure> {
    let handle = state.handle(&id)?;
    let (reply, rx) = oneshot::channel();
    handle
        .commands
        .send(Command::Record(reply))
        .map_err(|_| ApiError::new(ErrorCode::NotFound, format!("session {id:?} has ended")))?;
    let record = rx.await.map_err(|_| ApiError::new(ErrorCode::Internal, "session loop stopped"))?;
    let record = record.ok_or_else(|| ApiError::new(ErrorCode::InvalidRequest, "episode not finished yet"))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], record.to_ndjson()).into_response())
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, Failure> {
    let handle = state.handle(&id)?;
    Ok(ws.on_upgrade(move |socket| forward(socket, handle)))
}

async fn forward(mut socket: WebSocket, handle: Arc<Handle>) {
    let (mut rx, snapshot) = handle.hub.subscribe();
    let mut last = 0;
    for msg in snapshot {
        last = msg.seq;
        if send(&mut socket, &msg).await.is_err() {
            return;
        }
        if matches!(msg.body, MessageBody::End(_)) {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            next = rx.recv() => match next {
                Ok(msg) if msg.seq <= last => {}
                Ok(msg) => {
                    last = msg.seq;
                    if send(&mut socket, &msg).await.is_err() {
                        return;
                    }
                    if matches!(msg.body, MessageBody::End(_)) {
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
        }
    }
}

async fn send(socket: &mut WebSocket, msg: &SessionMessage) -> Result<(), axum::Error> {
    let text = serde_json::to_string(msg).expect("messages serialize");
    socket.send(Message::Text(text.into())).await
}
