//! HTTP JSON API over the story engine.
//!
//! Every story lives in its own project directory under the configured
//! root, named by its id. The service keeps no story data in memory:
//! mutating requests open the project, run one engine operation and save;
//! reads load the project without taking its lock. Restarting the service
//! therefore loses nothing.
//!
//! Mutations on one story are serialized by a per-story mutex. Depending on
//! [`BusyPolicy`], a second concurrent mutation waits or gets `409
//! story_busy`. Engine calls are synchronous and run on the blocking pool.

mod error;
mod jobs;
mod openapi;
mod routes;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::Router;
use tokio::sync::OwnedMutexGuard;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::timeout::TimeoutLayer;

use storystate_core::config::{BackendKind, BusyPolicy, Config, ServerSettings};
use storystate_core::metrics::{EmbeddingBackend, MockEmbedding};
use storystate_core::orchestrator::{Backends, Engine, EngineMode};

pub use error::{status_for, ApiError};
pub use jobs::{Job, JobStatus};
pub use openapi::openapi;

/// Header carrying the sha256 of an asset body.
pub const CONTENT_HASH_HEADER: &str = "x-content-hash";

/// Shared service state.
pub struct AppState {
    pub root: PathBuf,
    pub engine: Engine,
    pub embedder: Arc<dyn EmbeddingBackend>,
    /// Mode used when a request does not override it.
    pub mode: EngineMode,
    pub settings: ServerSettings,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    jobs: jobs::JobTable,
    create_lock: Mutex<()>,
}

impl AppState {
    pub fn new(
        settings: ServerSettings,
        backends: Backends,
        embedder: Arc<dyn EmbeddingBackend>,
        mode: EngineMode,
    ) -> Self {
        Self {
            root: settings.root.clone(),
            engine: Engine::new(backends),
            embedder,
            mode,
            settings,
            locks: Mutex::new(HashMap::new()),
            jobs: jobs::JobTable::default(),
            create_lock: Mutex::new(()),
        }
    }

    /// Mock backends rooted at `root`, with default settings otherwise.
    pub fn mock(root: impl Into<PathBuf>) -> Self {
        let settings = ServerSettings {
            root: root.into(),
            ..ServerSettings::default()
        };
        Self::new(
            settings,
            Backends::mock(),
            Arc::new(MockEmbedding::default()),
            EngineMode::full(),
        )
    }

    pub fn from_config(config: &Config, kind: BackendKind) -> Result<Self, ApiError> {
        let backends = config
            .backends(kind)
            .map_err(|e| ApiError::new("backend_error", e.to_string()))?;
        let embedder: Arc<dyn EmbeddingBackend> = config
            .embedder(kind)
            .map_err(|e| ApiError::new("backend_error", e.to_string()))?
            .into();
        Ok(Self::new(
            config.server.clone(),
            backends,
            embedder,
            config.engine.mode(),
        ))
    }

    /// Directory of an existing story.
    pub(crate) fn story_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::not_found(format!("unknown story {id}")));
        }
        let dir = self.root.join(id);
        if !dir.join("story.json").is_file() {
            return Err(ApiError::not_found(format!("unknown story {id}")));
        }
        Ok(dir)
    }

    /// Reserves a directory for a new story: the requested id, or the first
    /// free `s<N>`.
    pub(crate) fn reserve_story(&self, requested: Option<&str>) -> Result<(String, PathBuf), ApiError> {
        let _guard = self.create_lock.lock().unwrap_or_else(|e| e.into_inner());
        std::fs::create_dir_all(&self.root).map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(id) = requested {
            if !valid_id(id) {
                return Err(ApiError::validation(format!(
                    "story id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"
                )));
            }
            let dir = self.root.join(id);
            return match std::fs::create_dir(&dir) {
                Ok(()) => Ok((id.to_owned(), dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(ApiError::new(
                    "validation_error",
                    format!("story {id} already exists"),
                )),
                Err(e) => Err(ApiError::internal(e.to_string())),
            };
        }
        for n in 1u64.. {
            let id = format!("s{n}");
            let dir = self.root.join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(ApiError::internal(e.to_string())),
            }
        }
        unreachable!("story ids exhausted")
    }

    /// Takes the per-story mutation lock according to the busy policy.
    pub(crate) async fn acquire(&self, id: &str) -> Result<OwnedMutexGuard<()>, ApiError> {
        let lock = self
            .locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(id.to_owned())
            .or_default()
            .clone();
        match self.settings.busy_policy {
            BusyPolicy::Queue => Ok(lock.lock_owned().await),
            BusyPolicy::Reject => lock.try_lock_owned().map_err(|_| {
                ApiError::new("story_busy", format!("story {id} is being modified"))
            }),
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// The full router, with CORS and the request timeout applied.
pub fn router(state: Arc<AppState>) -> Router {
    let timeout = Duration::from_secs(state.settings.request_timeout_secs.max(1));
    let cors = state.settings.cors_origin.clone();
    let mut app = routes::routes(state).layer(TimeoutLayer::with_status_code(
        StatusCode::REQUEST_TIMEOUT,
        timeout,
    ));
    if let Some(origin) = cors {
        app = app.layer(cors_layer(&origin));
    }
    app
}

fn cors_layer(origin: &str) -> CorsLayer {
    let origin = if origin == "*" {
        AllowOrigin::any()
    } else {
        AllowOrigin::exact(HeaderValue::from_str(origin).unwrap_or(HeaderValue::from_static("null")))
    };
    CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE, header::IF_MATCH, header::IF_NONE_MATCH])
        .expose_headers([
            header::ETAG,
            header::LOCATION,
            HeaderName::from_static(CONTENT_HASH_HEADER),
        ])
}

/// Binds `127.0.0.1:<port>` and serves until the process is stopped.
pub async fn serve(state: AppState) -> std::io::Result<()> {
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], state.settings.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, root = %state.root.display(), "serving");
    axum::serve(listener, router(Arc::new(state))).await
}

/// Runs [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(state: AppState) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(state))
}

pub(crate) fn path_of(dir: &Path) -> String {
    dir.display().to_string()
}
