//! HTTP/JSON and WebSocket front end over a [`SessionManager`].
//!
//! Routes:
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/students` | [`EnrollRequest`] | student record, 201 |
//! | POST | `/students/{id}/photos` | [`PhotoBody`] | student record |
//! | PUT | `/students/{id}/wtoi` | `{"wtoi": "High"}` | student record |
//! | DELETE | `/students/{id}/consent` | | student record |
//! | POST | `/session/start` | optional session config | `{"session_id"}` |
//! | POST | `/session/stop` | optional `{"session_id"}` | `{"session_id"}` |
//! | POST | `/session/sweep` | | snapshot |
//! | GET | `/session/state` | | snapshot |
//! | GET | `/session/panorama/{sweep_id}` | | PNG |
//! | POST | `/session/click` | `{"x", "y"}` | `{"hit": ... or null}` |
//! | GET | `/sessions/{id}/report` | | session report |
//! | GET | `/session/stream` | WebSocket | one [`StreamMessage`] per snapshot |
//!
//! Errors come back as `{"error": "<code>", "message": "..."}`.

mod routes;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::Router;
use base64::Engine;
use classview_core::{
    Clock, ColorClass, FaceAnnotation, Roster, SessionConfig, SessionError, SessionManager,
    SessionSnapshot, WallClock, WtoILevel,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

pub use routes::{ClickBody, EnrollRequest, PhotoBody, StopBody, WtoIBody};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Server config file: the session defaults plus where to listen and store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    /// When set, every request needs `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
    /// Sleep through simulated camera motion so sweeps take real time.
    pub pace: bool,
    /// Start a session with the defaults as soon as the server is up.
    pub autostart: bool,
    #[serde(flatten)]
    pub session: SessionConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            bearer_token: None,
            pace: true,
            autostart: false,
            session: SessionConfig::default(),
        }
    }
}

impl ServerConfig {
    /// Relative `data_dir` and scene paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ServerConfig =
            serde_json::from_str(&text).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(scene) = cfg.session.scene.as_mut().filter(|s| s.is_relative()) {
            *scene = base.join(&*scene);
        }
        Ok(cfg)
    }
}

/// Annotation as pushed to stream clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamAnnotation {
    #[serde(rename = "box")]
    pub pano_box: [f64; 4],
    pub name: Option<String>,
    pub wtoi: Option<WtoILevel>,
    pub color: ColorClass,
}

/// One message per published snapshot on `/session/stream`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub sweep_id: u64,
    pub panorama_url: String,
    pub annotations: Vec<StreamAnnotation>,
}

impl From<&SessionSnapshot> for StreamMessage {
    fn from(s: &SessionSnapshot) -> Self {
        StreamMessage {
            sweep_id: s.sweep_id,
            panorama_url: s.panorama_url(),
            annotations: s.annotations.iter().map(stream_annotation).collect(),
        }
    }
}

fn stream_annotation(a: &FaceAnnotation) -> StreamAnnotation {
    StreamAnnotation {
        pano_box: a.pano_box.into(),
        name: a.display_name.clone(),
        wtoi: a.wtoi,
        color: a.color,
    }
}

/// Shared handler state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    pub manager: SessionManager,
    pub defaults: Arc<SessionConfig>,
    pub token: Option<Arc<str>>,
    stream: broadcast::Sender<Arc<str>>,
}

impl AppState {
    /// Wires the manager's snapshot feed into the WebSocket broadcast.
    pub fn new(manager: SessionManager, defaults: SessionConfig, token: Option<String>) -> Self {
        let (tx, _) = broadcast::channel(64);
        let sender = tx.clone();
        manager.subscribe(move |snap| {
            if let Ok(text) = serde_json::to_string(&StreamMessage::from(snap.as_ref())) {
                let _ = sender.send(text.into());
            }
        });
        AppState {
            manager,
            defaults: Arc::new(defaults),
            token: token.map(Into::into),
            stream: tx,
        }
    }

    /// Opens the roster under `data_dir` and builds the manager.
    pub fn from_config(cfg: &ServerConfig) -> Result<Self, ServerError> {
        let clock: Arc<dyn Clock> = Arc::new(WallClock { pace: cfg.pace });
        Self::with_clock(cfg, clock)
    }

    pub fn with_clock(cfg: &ServerConfig, clock: Arc<dyn Clock>) -> Result<Self, ServerError> {
        let embedder = cfg.session.backend.embedder()?;
        let roster = Roster::open(&cfg.data_dir, clock.clone()).map_err(SessionError::from)?;
        let manager = SessionManager::new(Arc::new(roster), embedder, clock, Some(cfg.data_dir.clone()));
        Ok(Self::new(manager, cfg.session.clone(), cfg.bearer_token.clone()))
    }

    pub fn subscribe_stream(&self) -> broadcast::Receiver<Arc<str>> {
        self.stream.subscribe()
    }
}

pub fn router(state: AppState) -> Router {
    routes::router(state)
}

/// Bind, optionally start a session, and serve until the listener fails.
pub async fn serve(cfg: ServerConfig) -> Result<(), ServerError> {
    let state = AppState::from_config(&cfg)?;
    if cfg.autostart {
        let manager = state.manager.clone();
        let session = cfg.session.clone();
        let id = tokio::task::spawn_blocking(move || manager.start_session(session))
            .await
            .map_err(|e| ServerError::Config(e.to_string()))??;
        tracing::info!(session = %id, "autostarted");
    }
    let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

pub(crate) fn decode_base64(field: &str, text: &str) -> Result<Vec<u8>, String> {
    base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| format!("{field}: {e}"))
}
