use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use classview_core::session::ClickResolution;
use classview_core::{
    PhotoUpload, Pose, RosterError, SessionConfig, SessionError, SessionId, SessionSnapshot, StudentId,
    StudentRecord, WtoILevel,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::{decode_base64, AppState};

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/students", post(enroll))
        .route("/students/{id}/photos", post(add_photo))
        .route("/students/{id}/wtoi", put(set_wtoi))
        .route("/students/{id}/consent", delete(withdraw))
        .route("/session/start", post(start))
        .route("/session/stop", post(stop))
        .route("/session/sweep", post(sweep))
        .route("/session/state", get(current_state))
        .route("/session/panorama/{sweep_id}", get(panorama))
        .route("/session/click", post(click))
        .route("/session/stream", get(stream))
        .route("/sessions/{id}/report", get(report))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

pub(crate) struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            SessionError::ConfigError(_) => (S::BAD_REQUEST, "config_error"),
            SessionError::AlreadyRunning(_) => (S::CONFLICT, "already_running"),
            SessionError::NotRunning => (S::CONFLICT, "not_running"),
            SessionError::NoSnapshotYet => (S::NOT_FOUND, "no_snapshot_yet"),
            SessionError::UnknownSession(_) => (S::NOT_FOUND, "unknown_session"),
            SessionError::OutOfBounds { .. } => (S::BAD_REQUEST, "out_of_bounds"),
            SessionError::Pipeline(_) => (S::SERVICE_UNAVAILABLE, "pipeline_error"),
            SessionError::CorruptLog(_) => (S::INTERNAL_SERVER_ERROR, "corrupt_log"),
            SessionError::Io(_) => (S::INTERNAL_SERVER_ERROR, "io_error"),
            SessionError::Roster(r) => match r {
                RosterError::InsufficientPhotos { .. } => (S::UNPROCESSABLE_ENTITY, "insufficient_photos"),
                RosterError::EmptyPhoto { .. } => (S::UNPROCESSABLE_ENTITY, "empty_photo"),
                RosterError::EmbeddingFailure { .. } => (S::UNPROCESSABLE_ENTITY, "embedding_failure"),
                RosterError::InvalidName => (S::UNPROCESSABLE_ENTITY, "invalid_name"),
                RosterError::UnknownStudent(_) => (S::NOT_FOUND, "unknown_student"),
                RosterError::WithdrawnStudent(_) => (S::GONE, "withdrawn_student"),
                RosterError::CorruptStore(_) => (S::INTERNAL_SERVER_ERROR, "corrupt_store"),
                RosterError::Io(_) => (S::INTERNAL_SERVER_ERROR, "io_error"),
            },
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })?
    .map_err(ApiError::from)
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn auth(
    State(state): State<AppState>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    let Some(expected) = state.token.as_deref() else {
        return next.run(req).await;
    };
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // Browsers cannot set headers on a WebSocket handshake.
    let ok = bearer == Some(expected) || q.token.as_deref() == Some(expected);
    if ok {
        next.run(req).await
    } else {
        ApiError {
            status: StatusCode::UNAUTHORIZED,
            code: "unauthorized",
            message: "missing or wrong bearer token".into(),
        }
        .into_response()
    }
}

/// Photo as sent over the API.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotoBody {
    pub pose: Pose,
    pub image_base64: String,
}

impl PhotoBody {
    fn upload(&self, index: usize) -> ApiResult<PhotoUpload> {
        Ok(PhotoUpload {
            image: decode_base64(&format!("photos[{index}]"), &self.image_base64).map_err(ApiError::bad_request)?,
            pose: self.pose,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub name: String,
    pub wtoi: WtoILevel,
    pub photos: Vec<PhotoBody>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WtoIBody {
    pub wtoi: WtoILevel,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StopBody {
    pub session_id: Option<SessionId>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClickBody {
    pub x: f64,
    pub y: f64,
}

/// Parse an optional JSON body; empty means `T::default()`.
fn optional_json<T: Default + for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn enroll(State(s): State<AppState>, Json(req): Json<EnrollRequest>) -> ApiResult<(StatusCode, Json<StudentRecord>)> {
    let photos = req
        .photos
        .iter()
        .enumerate()
        .map(|(i, p)| p.upload(i))
        .collect::<ApiResult<Vec<_>>>()?;
    let m = s.manager.clone();
    let rec = blocking(move || m.enroll(&req.name, photos, req.wtoi)).await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn add_photo(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<PhotoBody>,
) -> ApiResult<Json<StudentRecord>> {
    let upload = body.upload(0)?;
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.add_photo(&StudentId(id), upload)).await?))
}

async fn set_wtoi(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<WtoIBody>,
) -> ApiResult<Json<StudentRecord>> {
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.set_wtoi(&StudentId(id), body.wtoi)).await?))
}

async fn withdraw(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StudentRecord>> {
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.withdraw(&StudentId(id))).await?))
}

async fn start(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let cfg = if body.iter().all(u8::is_ascii_whitespace) {
        (*s.defaults).clone()
    } else {
        serde_json::from_slice::<SessionConfig>(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let m = s.manager.clone();
    let id = blocking(move || m.start_session(cfg)).await?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": id}))))
}

async fn stop(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let body: StopBody = optional_json(&body)?;
    let id = body
        .session_id
        .or_else(|| s.manager.active_session())
        .ok_or(ApiError::from(SessionError::NotRunning))?;
    let m = s.manager.clone();
    let stopped = id.clone();
    blocking(move || m.stop_session(&stopped)).await?;
    Ok(Json(json!({"session_id": id})))
}

#[derive(Serialize)]
struct SnapshotView<'a> {
    #[serde(flatten)]
    snapshot: &'a SessionSnapshot,
    panorama_url: String,
}

fn snapshot_json(s: &SessionSnapshot) -> Json<serde_json::Value> {
    Json(
        serde_json::to_value(SnapshotView {
            snapshot: s,
            panorama_url: s.panorama_url(),
        })
        .unwrap_or_default(),
    )
}

async fn sweep(State(s): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let m = s.manager.clone();
    let snap = blocking(move || m.run_sweep()).await?;
    Ok(snapshot_json(&snap))
}

async fn current_state(State(s): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let snap = s.manager.current_state()?;
    Ok(snapshot_json(&snap))
}

async fn panorama(State(s): State<AppState>, Path(sweep_id): Path<u64>) -> ApiResult<Response> {
    let pano = s.manager.panorama(sweep_id).ok_or(ApiError {
        status: StatusCode::NOT_FOUND,
        code: "unknown_sweep",
        message: format!("panorama {sweep_id} is not kept"),
    })?;
    let png = tokio::task::spawn_blocking(move || pano.to_png())
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Serialize)]
struct ClickReply {
    hit: Option<ClickResolution>,
}

async fn click(State(s): State<AppState>, Json(body): Json<ClickBody>) -> ApiResult<Json<ClickReply>> {
    let m = s.manager.clone();
    let hit = blocking(move || m.resolve_click(body.x, body.y)).await?;
    Ok(Json(ClickReply { hit }))
}

async fn report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let m = s.manager.clone();
    let report = blocking(move || m.session_report(&SessionId(id))).await?;
    Ok(Json(serde_json::to_value(report).unwrap_or_default()))
}

async fn stream(State(s): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let rx = s.subscribe_stream();
    ws.on_upgrade(move |socket| pump(socket, rx))
}

async fn pump(mut socket: WebSocket, mut rx: tokio::sync::broadcast::Receiver<std::sync::Arc<str>>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => tracing::debug!(skipped = n, "stream client lagging"),
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
