//! Chat-completions client for OpenAI-compatible endpoints.

use base64::Engine as _;
use serde_json::{json, Value};

use crate::agents::{
    BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse, RequestLimiter,
};

#[derive(Debug)]
pub struct HttpChatBackend {
    config: BackendConfig,
    images: bool,
    client: reqwest::blocking::Client,
    limiter: RequestLimiter,
}

impl HttpChatBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        Ok(Self {
            limiter: RequestLimiter::new(config.max_parallel_requests),
            config,
            images: true,
            client,
        })
    }

    /// Declares the model text-only; the critic then works from prompts.
    pub fn text_only(mut self) -> Self {
        self.images = false;
        self
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let user = if request.attachments.is_empty() || !self.images {
            json!(request.user_text)
        } else {
            let mut parts = vec![json!({"type": "text", "text": request.user_text})];
            for a in &request.attachments {
                let data = base64::engine::general_purpose::STANDARD.encode(&a.bytes);
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{};base64,{data}", a.media_type)},
                }));
            }
            Value::Array(parts)
        };
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": user},
            ],
        });
        if request.response_schema_id != crate::agents::NARRATION_SCHEMA {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

impl ChatBackend for HttpChatBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn supports_images(&self) -> bool {
        self.images
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = self.body(request);
        self.limiter.run(|| {
            let mut call = self.client.post(self.url()).json(&body);
            if let Some(key) = &self.config.api_key {
                call = call.bearer_auth(key);
            }
            let response = call.send().map_err(|e| classify(e, &self.config))?;
            let status = response.status();
            let text = response
                .text()
                .map_err(|e| BackendError::Protocol(e.to_string()))?;
            if !status.is_success() {
                return Err(BackendError::Http {
                    status: status.as_u16(),
                    body: text,
                });
            }
            let value: Value =
                serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
            value["choices"][0]["message"]["content"]
                .as_str()
                .map(|text| ChatResponse {
                    text: text.to_owned(),
                })
                .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
        })
    }
}

pub(crate) fn classify(error: reqwest::Error, config: &BackendConfig) -> BackendError {
    if error.is_timeout() {
        BackendError::Timeout(config.timeout())
    } else {
        BackendError::Unreachable(error.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Attachment;
    use crate::ids::RevisionId;
    use crate::state::{AssetKind, AssetRef};

    #[test]
    fn body_embeds_images_as_data_urls() {
        let backend = HttpChatBackend::new(BackendConfig {
            endpoint: "http://localhost:1/v1".into(),
            model: "m".into(),
            ..BackendConfig::default()
        })
        .unwrap();
        assert_eq!(backend.url(), "http://localhost:1/v1/chat/completions");
        let request = ChatRequest {
            system_text: "s".into(),
            user_text: "u".into(),
            response_schema_id: "critic.v1".into(),
            attachments: vec![Attachment {
                asset: AssetRef {
                    kind: AssetKind::PageImage,
                    uri: "assets/x".into(),
                    content_hash: "x".into(),
                    revision: RevisionId::from_index(0),
                },
                media_type: "image/png".into(),
                bytes: vec![1, 2, 3],
            }],
        };
        let body = backend.body(&request);
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(body["response_format"]["type"], "json_object");
    }

    #[test]
    fn unreachable_endpoint_is_reported() {
        let backend = HttpChatBackend::new(BackendConfig {
            endpoint: "http://127.0.0.1:9".into(),
            timeout_secs: 2,
            ..BackendConfig::default()
        })
        .unwrap();
        let err = backend
            .send(&ChatRequest {
                system_text: String::new(),
                user_text: String::new(),
                response_schema_id: "planner.v1".into(),
                attachments: vec![],
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::Unreachable(_) | BackendError::Timeout(_)));
    }
}
