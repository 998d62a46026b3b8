//! Transactional edits over [`StoryState`](crate::state::StoryState), the
//! resulting diffs and dirty sets, and the revision chain.
//!
//! All mutation of a story goes through [`apply_batch`]; callers serialize
//! writes per story (the project lock and the service's per-story mutex do
//! this), while readers work on immutable snapshots.

mod apply;
mod diff;
mod dirty;
mod history;
mod ops;

use thiserror::Error;

use crate::ids::RevisionId;

pub use apply::apply_batch;
pub use diff::{
    diff_states, CharacterDelta, CharacterField, OrdinalChange, PageField, StateDiff,
    StructuralChanges,
};
pub use dirty::{compute_dirty_set, oracle_dirty_set, DirtySet};
pub use history::{revert, History, Revision, RevisionDraft, RevisionKind};
pub use ops::{
    CharacterDraft, DraftConstraint, EditBatch, EditOp, Origin, PageDraft, WorldField, WorldValue,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("edit batch is empty")]
    EmptyBatch,
    #[error("op {op_index} rejected: {reason}")]
    Rejected { op_index: usize, reason: String },
    #[error("unknown revision {0}")]
    UnknownRevision(RevisionId),
}
