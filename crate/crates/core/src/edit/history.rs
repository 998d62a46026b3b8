use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::edit::diff::{diff_states, StateDiff};
use crate::edit::dirty::{compute_dirty_set, DirtySet};
use crate::edit::ops::Origin;
use crate::edit::EditError;
use crate::ids::{PageId, RevisionId};
use crate::state::StoryState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RevisionKind {
    Create,
    Import,
    Edit,
    /// Prompt-only edit: the state is untouched, the request text is appended
    /// to every page prompt instead.
    PromptOnlyEdit,
    CriticFix,
    Revert { to: RevisionId },
    Retry,
}

/// Immutable snapshot in a story's linear history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub id: RevisionId,
    pub parent: Option<RevisionId>,
    pub state: StoryState,
    pub diff: StateDiff,
    pub dirty: DirtySet,
    pub timestamp: DateTime<Utc>,
    pub origin: Origin,
    pub kind: RevisionKind,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub regenerated_image_pages: BTreeSet<PageId>,
    #[serde(default)]
    pub regenerated_text_pages: BTreeSet<PageId>,
    #[serde(default)]
    pub elapsed_ms: u64,
    /// Prompt-only edits in effect at this revision, oldest first.
    #[serde(default)]
    pub prompt_appendix: Vec<String>,
}

/// Everything needed to append a revision; id, parent and time are filled in.
#[derive(Debug, Clone)]
pub struct RevisionDraft {
    pub state: StoryState,
    pub diff: StateDiff,
    pub dirty: DirtySet,
    pub origin: Origin,
    pub kind: RevisionKind,
    pub note: String,
    pub regenerated_image_pages: BTreeSet<PageId>,
    pub regenerated_text_pages: BTreeSet<PageId>,
    pub elapsed_ms: u64,
    pub prompt_appendix: Vec<String>,
}

impl RevisionDraft {
    pub fn new(state: StoryState, origin: Origin, kind: RevisionKind) -> Self {
        Self {
            state,
            diff: StateDiff::default(),
            dirty: DirtySet::default(),
            origin,
            kind,
            note: String::new(),
            regenerated_image_pages: BTreeSet::new(),
            regenerated_text_pages: BTreeSet::new(),
            elapsed_ms: 0,
            prompt_appendix: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    revisions: Vec<Revision>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a history from stored revisions, checking the chain links.
    pub fn from_revisions(mut revisions: Vec<Revision>) -> Result<Self, String> {
        revisions.sort_by_key(|r| r.id.index().unwrap_or(usize::MAX));
        for (i, rev) in revisions.iter().enumerate() {
            if rev.id != RevisionId::from_index(i) {
                return Err(format!("expected revision r{i}, found {}", rev.id));
            }
            let expected_parent = i.checked_sub(1).map(RevisionId::from_index);
            if rev.parent != expected_parent {
                return Err(format!("revision {} has a broken parent link", rev.id));
            }
        }
        Ok(Self { revisions })
    }

    pub fn revisions(&self) -> &[Revision] {
        &self.revisions
    }

    pub fn len(&self) -> usize {
        self.revisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revisions.is_empty()
    }

    pub fn head(&self) -> Option<&Revision> {
        self.revisions.last()
    }

    pub fn get(&self, id: &RevisionId) -> Option<&Revision> {
        self.revisions.iter().find(|r| &r.id == id)
    }

    /// Id the next committed revision will receive.
    pub fn next_id(&self) -> RevisionId {
        RevisionId::from_index(self.revisions.len())
    }

    pub fn commit(&mut self, draft: RevisionDraft) -> &Revision {
        let revision = Revision {
            id: self.next_id(),
            parent: self.head().map(|r| r.id.clone()),
            state: draft.state,
            diff: draft.diff,
            dirty: draft.dirty,
            timestamp: Utc::now(),
            origin: draft.origin,
            kind: draft.kind,
            note: draft.note,
            regenerated_image_pages: draft.regenerated_image_pages,
            regenerated_text_pages: draft.regenerated_text_pages,
            elapsed_ms: draft.elapsed_ms,
            prompt_appendix: draft.prompt_appendix,
        };
        self.revisions.push(revision);
        self.revisions.last().expect("just pushed")
    }

    /// Restores the snapshot of `to` and records the revert as a new head.
    /// Assets are content-addressed, so the restored pointers stay valid and
    /// nothing is regenerated.
    pub fn revert(&mut self, to: &RevisionId, origin: Origin) -> Result<StoryState, EditError> {
        let target = self
            .get(to)
            .ok_or_else(|| EditError::UnknownRevision(to.clone()))?
            .clone();
        let head = self
            .head()
            .ok_or_else(|| EditError::UnknownRevision(to.clone()))?;
        let diff = diff_states(&head.state, &target.state);
        let dirty = compute_dirty_set(&head.state, &target.state, &diff);
        let mut draft = RevisionDraft::new(
            target.state.clone(),
            origin,
            RevisionKind::Revert { to: to.clone() },
        );
        draft.diff = diff;
        draft.dirty = dirty;
        draft.prompt_appendix = target.prompt_appendix.clone();
        draft.note = format!("revert to {to}");
        self.commit(draft);
        Ok(target.state)
    }
}

/// Free-function form of [`History::revert`].
pub fn revert(history: &mut History, to: &RevisionId) -> Result<StoryState, EditError> {
    history.revert(to, Origin::User)
}
