//! Runtime configuration: a TOML file overlaid with `STORYSTATE_*`
//! environment variables.
//!
//! ```toml
//! [llm]
//! endpoint = "https://api.example.com/v1"
//! model = "some-chat-model"
//!
//! [t2i]
//! endpoint = "http://localhost:7860/generate"
//!
//! [engine]
//! auto_accept_critic = false
//! critic_max_iters = 3
//!
//! [server]
//! port = 8080
//! root = "stories"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{BackendConfig, BackendError, HttpChatBackend};
use crate::generation::{ChatTextBackend, HttpImageBackend};
use crate::metrics::{EmbeddingBackend, HttpEmbedding, MockEmbedding};
use crate::orchestrator::{Backends, EngineMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {var}: {value:?}")]
    Env { var: String, value: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl BackendKind {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "mock" => Some(Self::Mock),
            "http" => Some(Self::Http),
            _ => None,
        }
    }
}

fn default_iters() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineSettings {
    #[serde(default)]
    pub auto_accept_critic: bool,
    #[serde(default = "default_iters")]
    pub critic_max_iters: u32,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            auto_accept_critic: false,
            critic_max_iters: default_iters(),
        }
    }
}

impl EngineSettings {
    /// The full mode with these critic settings.
    pub fn mode(&self) -> EngineMode {
        EngineMode {
            auto_accept_critic: self.auto_accept_critic,
            critic_max_iters: self.critic_max_iters,
            ..EngineMode::full()
        }
    }
}

/// What a second mutating request on a busy story does.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusyPolicy {
    #[default]
    Queue,
    Reject,
}

fn default_port() -> u16 {
    8080
}

fn default_root() -> PathBuf {
    PathBuf::from("stories")
}

fn default_request_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSettings {
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_root")]
    pub root: PathBuf,
    /// Allowed browser origin; `None` disables CORS headers.
    #[serde(default)]
    pub cors_origin: Option<String>,
    /// Answer generation requests with 202 and a job to poll.
    #[serde(default)]
    pub async_jobs: bool,
    #[serde(default)]
    pub busy_policy: BusyPolicy,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            port: default_port(),
            root: default_root(),
            cors_origin: None,
            async_jobs: false,
            busy_policy: BusyPolicy::default(),
            request_timeout_secs: default_request_timeout(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub llm: BackendConfig,
    #[serde(default)]
    pub t2i: BackendConfig,
    #[serde(default)]
    pub embedding: BackendConfig,
    #[serde(default)]
    pub engine: EngineSettings,
    #[serde(default)]
    pub server: ServerSettings,
}

impl Config {
    /// Reads `path` (if given) and applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => Self::from_toml_file(path)?,
            None => Self::default(),
        };
        config.apply_env(|var| std::env::var(var).ok())?;
        Ok(config)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Overlays `STORYSTATE_*` variables looked up through `env`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let text = |var: &str, slot: &mut String| {
            if let Some(v) = env(var) {
                *slot = v;
            }
        };
        text("STORYSTATE_LLM_ENDPOINT", &mut self.llm.endpoint);
        text("STORYSTATE_LLM_MODEL", &mut self.llm.model);
        text("STORYSTATE_T2I_ENDPOINT", &mut self.t2i.endpoint);
        text("STORYSTATE_T2I_MODEL", &mut self.t2i.model);
        text("STORYSTATE_EMBED_ENDPOINT", &mut self.embedding.endpoint);
        text("STORYSTATE_EMBED_MODEL", &mut self.embedding.model);
        for (var, slot) in [
            ("STORYSTATE_LLM_KEY", &mut self.llm.api_key),
            ("STORYSTATE_T2I_KEY", &mut self.t2i.api_key),
            ("STORYSTATE_EMBED_KEY", &mut self.embedding.api_key),
        ] {
            if let Some(v) = env(var) {
                *slot = Some(v);
            }
        }
        if let Some(v) = env("STORYSTATE_BACKEND") {
            self.backend = BackendKind::parse(&v).ok_or(ConfigError::Env {
                var: "STORYSTATE_BACKEND".into(),
                value: v,
            })?;
        }
        if let Some(v) = env("STORYSTATE_PORT") {
            self.server.port = v.parse().map_err(|_| ConfigError::Env {
                var: "STORYSTATE_PORT".into(),
                value: v,
            })?;
        }
        if let Some(v) = env("STORYSTATE_ROOT") {
            self.server.root = PathBuf::from(v);
        }
        if let Some(v) = env("STORYSTATE_CORS_ORIGIN") {
            self.server.cors_origin = Some(v);
        }
        Ok(())
    }

    pub fn backends(&self, kind: BackendKind) -> Result<Backends, BackendError> {
        match kind {
            BackendKind::Mock => Ok(Backends::mock()),
            BackendKind::Http => {
                require_endpoint("llm", &self.llm)?;
                require_endpoint("t2i", &self.t2i)?;
                Ok(Backends {
                    chat: Arc::new(HttpChatBackend::new(self.llm.clone())?),
                    text: Arc::new(ChatTextBackend {
                        chat: HttpChatBackend::new(self.llm.clone())?,
                    }),
                    image: Arc::new(HttpImageBackend::new(self.t2i.clone())?),
                })
            }
        }
    }

    pub fn embedder(&self, kind: BackendKind) -> Result<Box<dyn EmbeddingBackend>, BackendError> {
        match kind {
            BackendKind::Mock => Ok(Box::new(MockEmbedding::default())),
            BackendKind::Http => {
                require_endpoint("embedding", &self.embedding)?;
                Ok(Box::new(HttpEmbedding::new(self.embedding.clone())?))
            }
        }
    }
}

fn require_endpoint(name: &str, config: &BackendConfig) -> Result<(), BackendError> {
    if config.endpoint.trim().is_empty() {
        return Err(BackendError::Unreachable(format!(
            "no {name} endpoint configured"
        )));
    }
    Ok(())
}
