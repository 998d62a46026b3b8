//! Backend that replays canned replies, for tests and fixtures.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use crate::agents::{BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Replies queued per schema id, consumed in order. Every request is recorded.
#[derive(Debug, Default)]
pub struct ScriptedChatBackend {
    config: BackendConfig,
    images: bool,
    queues: Mutex<BTreeMap<String, VecDeque<Result<String, BackendError>>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChatBackend {
    pub fn new() -> Self {
        Self {
            config: BackendConfig {
                endpoint: "scripted://".into(),
                ..BackendConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.config.max_retries = max_retries;
        self
    }

    pub fn with_images(mut self, images: bool) -> Self {
        self.images = images;
        self
    }

    pub fn push(&self, schema_id: &str, reply: impl Into<String>) -> &Self {
        self.push_result(schema_id, Ok(reply.into()))
    }

    pub fn push_error(&self, schema_id: &str, error: BackendError) -> &Self {
        self.push_result(schema_id, Err(error))
    }

    fn push_result(&self, schema_id: &str, reply: Result<String, BackendError>) -> &Self {
        self.queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(schema_id.to_owned())
            .or_default()
            .push_back(reply);
        self
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn remaining(&self, schema_id: &str) -> usize {
        self.queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(schema_id)
            .map_or(0, VecDeque::len)
    }
}

impl ChatBackend for ScriptedChatBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn supports_images(&self) -> bool {
        self.images
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        let next = self
            .queues
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get_mut(&request.response_schema_id)
            .and_then(VecDeque::pop_front);
        match next {
            Some(reply) => reply.map(|text| ChatResponse { text }),
            None => Err(BackendError::Failed(format!(
                "no scripted reply left for {}",
                request.response_schema_id
            ))),
        }
    }
}
