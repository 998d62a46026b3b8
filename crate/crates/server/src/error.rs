use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};

use storystate_core::agents::AgentError;
use storystate_core::edit::EditError;
use storystate_core::orchestrator::EngineError;
use storystate_core::persistence::PersistenceError;
use storystate_core::prompt::PromptError;

/// JSON error body: `{code, message, detail}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

/// HTTP status for an error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "validation_error" | "edit_rejected" | "ungrounded_reference" | "ambiguous_reference" => {
            StatusCode::BAD_REQUEST
        }
        "not_found" | "unknown_revision" => StatusCode::NOT_FOUND,
        "project_locked" | "story_busy" => StatusCode::CONFLICT,
        "precondition_failed" => StatusCode::PRECONDITION_FAILED,
        "backend_error" | "malformed_agent_output" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: status_for(code),
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new("not_found", what)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new("validation_error", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("internal_error", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        let detail = match &err {
            EngineError::Edit(EditError::Rejected { op_index, .. }) => json!({ "op_index": op_index }),
            EngineError::Edit(EditError::UnknownRevision(rev)) => json!({ "revision": rev }),
            EngineError::Agent(AgentError::UngroundedReference { surface }) => json!({ "surface": surface }),
            EngineError::Agent(AgentError::AmbiguousReference { surface, candidates }) => {
                json!({ "surface": surface, "candidates": candidates })
            }
            EngineError::Agent(AgentError::MalformedAgentOutput { schema, attempts, .. }) => {
                json!({ "schema": schema, "attempts": attempts })
            }
            EngineError::UnknownPage(page) => json!({ "page": page }),
            EngineError::UnknownFinding(id) => json!({ "finding": id }),
            _ => Value::Null,
        };
        ApiError::new(err.code(), err.to_string()).with_detail(detail)
    }
}

impl From<PersistenceError> for ApiError {
    fn from(err: PersistenceError) -> Self {
        EngineError::from(err).into()
    }
}

impl From<PromptError> for ApiError {
    fn from(err: PromptError) -> Self {
        EngineError::from(err).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::validation(rejection.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(rejection: QueryRejection) -> Self {
        ApiError::validation(rejection.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_engine_code_has_a_status() {
        let codes = [
            ("backend_error", 502),
            ("malformed_agent_output", 502),
            ("ungrounded_reference", 400),
            ("ambiguous_reference", 400),
            ("validation_error", 400),
            ("edit_rejected", 400),
            ("unknown_revision", 404),
            ("not_found", 404),
            ("project_locked", 409),
            ("load_error", 500),
            ("internal_error", 500),
        ];
        for (code, status) in codes {
            assert_eq!(status_for(code).as_u16(), status, "{code}");
        }
    }

    #[test]
    fn rejected_op_index_is_reported() {
        let err: ApiError = EngineError::Edit(EditError::Rejected {
            op_index: 2,
            reason: "no such page".into(),
        })
        .into();
        assert_eq!(err.code, "edit_rejected");
        assert_eq!(err.detail, json!({"op_index": 2}));
        assert_eq!(err.status, StatusCode::BAD_REQUEST);
    }
}
