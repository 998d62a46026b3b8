//! Explicit, versioned story state for illustrated storybooks.
//!
//! A story is a character sheet, world settings and a list of pages. Edits
//! are applied as atomic batches, every change produces a diff and a dirty
//! set, and only dirty pages are regenerated. Prompts are compiled
//! deterministically from the state.

pub mod agents;
pub mod canonical;
pub mod config;
pub mod edit;
pub mod generation;
pub mod ids;
pub mod metrics;
pub mod orchestrator;
pub mod persistence;
pub mod prompt;
pub mod state;
pub mod testkit;
pub mod validate;
