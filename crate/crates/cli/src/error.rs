use std::fmt::Display;
use std::process::ExitCode;

use serde_json::{json, Value};

use storystate_core::agents::BackendError;
use storystate_core::config::ConfigError;
use storystate_core::orchestrator::EngineError;
use storystate_core::persistence::PersistenceError;
use storystate_core::prompt::PromptError;
use storystate_server::ApiError;

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn internal(e: impl Display) -> Self {
        Self::new("internal_error", e.to_string())
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new("validation_error", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("not_found", message)
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new("parse_error", message)
    }

    pub fn backend(e: BackendError) -> Self {
        Self::new("backend_error", e.to_string())
    }

    pub fn config(e: ConfigError) -> Self {
        Self::new("parse_error", e.to_string())
    }

    pub fn from_prompt(e: PromptError) -> Self {
        EngineError::from(e).into()
    }

    pub fn from_api(e: ApiError) -> Self {
        Self {
            code: e.code,
            message: e.message,
            detail: e.detail,
        }
    }

    pub fn exit_status(&self) -> u8 {
        match self.code {
            "validation_error" | "edit_rejected" | "ungrounded_reference" | "ambiguous_reference" => 3,
            "not_found" | "unknown_revision" => 4,
            "project_locked" => 5,
            "backend_error" | "malformed_agent_output" => 6,
            "load_error" | "parse_error" => 7,
            _ => 1,
        }
    }

    pub fn report(&self, as_json: bool) -> ExitCode {
        if as_json {
            let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
            eprintln!("{body}");
        } else {
            eprintln!("error[{}]: {}", self.code, self.message);
        }
        ExitCode::from(self.exit_status())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        Self::from_api(e.into())
    }
}

impl From<PersistenceError> for CliError {
    fn from(e: PersistenceError) -> Self {
        EngineError::from(e).into()
    }
}
