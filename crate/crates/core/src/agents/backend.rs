use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::AssetRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("unexpected backend response: {0}")]
    Protocol(String),
    #[error("backend failed: {0}")]
    Failed(String),
}

/// An asset handed to a multimodal backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub asset: AssetRef,
    pub media_type: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub response_schema_id: String,
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    2
}

fn default_parallel() -> usize {
    4
}

/// Connection settings shared by every HTTP-backed client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Re-prompts after a schema violation.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_parallel_requests: default_parallel(),
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// A text (optionally multimodal) chat model.
pub trait ChatBackend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    /// Whether image attachments are understood. Text-only backends get a
    /// textual stand-in and the critic marks its report degraded.
    fn supports_images(&self) -> bool {
        false
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct RequestLimiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl RequestLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let out = f();
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.freed.notify_one();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(RequestLimiter::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limiter, live, peak) = (limiter.clone(), live.clone(), peak.clone());
                s.spawn(move || {
                    limiter.run(|| {
                        let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        std::thread::sleep(Duration::from_millis(5));
                        live.fetch_sub(1, Ordering::SeqCst);
                    })
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
