//! Backend-driven agents: planner, state manager, edit-request parser and
//! consistency critic.
//!
//! Every agent speaks to a [`ChatBackend`] through a JSON contract named by a
//! schema id (`planner.v1`, ...). Replies are decoded and checked before
//! anything reaches the engine; a reply that fails the check is sent back to
//! the backend with the violation, up to `max_retries` times.
//!
//! [`MockChatBackend`] answers every schema with a deterministic rule engine
//! so the whole system runs offline.

mod backend;
mod critic;
mod edit_parser;
mod http;
mod mock;
mod planner;
mod scripted;
mod state_manager;
mod structured;

use thiserror::Error;

pub use backend::{
    Attachment, BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse,
    RequestLimiter,
};
pub use critic::{critique, CriticFinding, CriticReport, FindingKind, PageAssets};
pub use edit_parser::{ground_ops, parse_edit_request, RawOp};
pub use http::HttpChatBackend;
pub(crate) use http::classify as classify_reqwest;
pub use mock::MockChatBackend;
pub use planner::{plan, CharacterCandidate, PlannedPage, PlannerOutput, WorldHint};
pub use scripted::ScriptedChatBackend;
pub use state_manager::{build_state, CorefCluster};

pub const PLANNER_SCHEMA: &str = "planner.v1";
pub const COREFERENCE_SCHEMA: &str = "coreference.v1";
pub const EDIT_REQUEST_SCHEMA: &str = "edit_request.v1";
pub const CRITIC_SCHEMA: &str = "critic.v1";
pub const NARRATION_SCHEMA: &str = "narration.v1";

/// System prompt shipped for a schema id.
pub fn system_template(schema_id: &str) -> Option<&'static str> {
    match schema_id {
        PLANNER_SCHEMA => Some(include_str!("../../templates/planner.v1.txt")),
        COREFERENCE_SCHEMA => Some(include_str!("../../templates/coreference.v1.txt")),
        EDIT_REQUEST_SCHEMA => Some(include_str!("../../templates/edit_request.v1.txt")),
        CRITIC_SCHEMA => Some(include_str!("../../templates/critic.v1.txt")),
        NARRATION_SCHEMA => Some(include_str!("../../templates/narration.v1.txt")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed {schema} output after {attempts} attempt(s): {message}")]
    MalformedAgentOutput {
        schema: String,
        attempts: u32,
        message: String,
        /// Last raw reply, kept for debugging.
        raw: String,
    },
    #[error("cannot resolve {surface:?} against the story")]
    UngroundedReference { surface: String },
    #[error("{surface:?} could refer to several characters: {candidates:?}")]
    AmbiguousReference {
        surface: String,
        candidates: Vec<String>,
    },
    #[error("invalid agent input: {0}")]
    InvalidInput(String),
}
