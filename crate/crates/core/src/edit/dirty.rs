//! Which pages must be regenerated after a state change.
//!
//! Two independent routes compute the same answer:
//!
//! * [`compute_dirty_set`] reads the [`StateDiff`] and applies dependency
//!   rules (page fields → that page; character sheet or invariants → pages
//!   holding the character; world or prompt config → every page; added
//!   pages → themselves);
//! * [`oracle_dirty_set`] compiles every prompt for both states and reports
//!   the pages whose effective prompt text differs.
//!
//! The property suite asserts the two agree.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::edit::diff::{CharacterDelta, CharacterField, PageField, StateDiff};
use crate::ids::PageId;
use crate::prompt::compile_any;
use crate::state::{PageState, StoryState};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirtySet {
    pub image_pages: BTreeSet<PageId>,
    pub text_pages: BTreeSet<PageId>,
    pub identity_prompt_dirty: bool,
}

impl DirtySet {
    pub fn is_empty(&self) -> bool {
        self.image_pages.is_empty() && self.text_pages.is_empty() && !self.identity_prompt_dirty
    }

    /// Every page of `state`, images and narration both.
    pub fn everything(state: &StoryState) -> Self {
        let all = state.page_ids();
        Self {
            image_pages: all.clone(),
            text_pages: all,
            identity_prompt_dirty: true,
        }
    }

    pub fn union_with(&mut self, other: &DirtySet) {
        self.image_pages.extend(other.image_pages.iter().cloned());
        self.text_pages.extend(other.text_pages.iter().cloned());
        self.identity_prompt_dirty |= other.identity_prompt_dirty;
    }
}

pub fn compute_dirty_set(old: &StoryState, new: &StoryState, diff: &StateDiff) -> DirtySet {
    let mut dirty = DirtySet::default();
    let index = new.character_index();
    let pages_of = |c| index.get(c).cloned().unwrap_or_default();

    for (character, delta) in &diff.character_deltas {
        match delta {
            CharacterDelta::Added | CharacterDelta::Removed => dirty.identity_prompt_dirty = true,
            CharacterDelta::Modified { fields } => {
                let rendered = fields
                    .iter()
                    .any(|f| matches!(f, CharacterField::Name | CharacterField::Attributes));
                if rendered {
                    dirty.identity_prompt_dirty = true;
                    dirty.image_pages.extend(pages_of(character));
                }
            }
        }
    }
    if diff.characters_reordered {
        dirty.identity_prompt_dirty = true;
        // Scoped identities and "featuring" lists follow sheet order.
        for page in &new.pages {
            if page.characters.len() > 1 {
                dirty.image_pages.insert(page.id.clone());
            }
        }
    }
    for character in &diff.changed_invariant_characters {
        if old.active_invariants(character) != new.active_invariants(character) {
            dirty.identity_prompt_dirty = true;
            dirty.image_pages.extend(pages_of(character));
        }
    }
    if !diff.changed_world_fields.is_empty() {
        dirty.identity_prompt_dirty = true;
        dirty.image_pages.extend(new.page_ids());
    }
    if diff.prompt_config_changed {
        dirty.image_pages.extend(new.page_ids());
    }
    for (page, fields) in &diff.changed_pages {
        let prompt_fields: Vec<&PageField> = fields.iter().filter(|f| f.affects_prompt()).collect();
        let only_constraints = prompt_fields
            .iter()
            .all(|f| matches!(f, PageField::Constraint(_)));
        // Keys are not rendered: a rename that keeps the text in place is
        // invisible to the prompt.
        let rendered_same = only_constraints
            && match (old.page(page), new.page(page)) {
                (Some(a), Some(b)) => rendered_constraints(a) == rendered_constraints(b),
                _ => false,
            };
        if !prompt_fields.is_empty() && !rendered_same {
            dirty.image_pages.insert(page.clone());
        }
        if fields.iter().any(|f| f.affects_narration()) {
            dirty.text_pages.insert(page.clone());
        }
    }
    for page in &diff.structural.added {
        dirty.image_pages.insert(page.clone());
        dirty.text_pages.insert(page.clone());
    }
    let live = new.page_ids();
    dirty.image_pages.retain(|p| live.contains(p));
    dirty.text_pages.retain(|p| live.contains(p));
    dirty
}

fn rendered_constraints(page: &PageState) -> Vec<&str> {
    let mut constraints: Vec<_> = page.constraints.iter().collect();
    constraints.sort_by(|a, b| a.key.cmp(&b.key));
    constraints.iter().map(|c| c.description.as_str()).collect()
}

/// Brute-force reference: recompile everything and compare texts.
///
/// Image pages are the pages whose effective prompt (scoped identity + page
/// prompt) differs or that are new. Text pages are new pages plus pages
/// whose narration inputs (scene, phase, character set) differ.
pub fn oracle_dirty_set(old: &StoryState, new: &StoryState) -> DirtySet {
    let before = compile_any(old);
    let after = compile_any(new);
    let mut dirty = DirtySet {
        identity_prompt_dirty: before.identity.text != after.identity.text,
        ..DirtySet::default()
    };
    for prompt in &after.pages {
        match before.page(&prompt.page) {
            Some(previous) if previous.effective_text() == prompt.effective_text() => {}
            _ => {
                dirty.image_pages.insert(prompt.page.clone());
            }
        }
    }
    for page in &new.pages {
        let narration_changed = match old.page(&page.id) {
            None => true,
            Some(prev) => {
                let set = |p: &PageState| {
                    p.characters.iter().cloned().collect::<BTreeSet<_>>()
                };
                prev.scene_description != page.scene_description
                    || prev.narrative_phase != page.narrative_phase
                    || set(prev) != set(page)
            }
        };
        if narration_changed {
            dirty.text_pages.insert(page.id.clone());
        }
    }
    dirty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::ops::{EditBatch, EditOp, WorldField, WorldValue};
    use crate::edit::{apply_batch, diff_states};
    use crate::state::IdentityInvariant;
    use crate::testkit::sample_story;

    fn run(state: &StoryState, ops: Vec<EditOp>) -> (DirtySet, DirtySet) {
        let (next, diff) = apply_batch(state, &EditBatch::user(ops)).unwrap();
        (
            compute_dirty_set(state, &next, &diff),
            oracle_dirty_set(state, &next),
        )
    }

    #[test]
    fn global_attribute_edit_dirties_pages_of_that_character() {
        let state = sample_story(10);
        // The owl sits on ordinals 1, 3, 5.
        let owl = state.characters[2].id.clone();
        let expected: BTreeSet<PageId> = [1, 3, 5]
            .iter()
            .map(|o| state.page_by_ordinal(*o).unwrap().id.clone())
            .collect();
        let (rules, oracle) = run(
            &state,
            vec![EditOp::SetCharacterAttribute {
                character: owl,
                key: "eyes".into(),
                value: "green".into(),
            }],
        );
        assert_eq!(rules.image_pages, expected);
        assert!(rules.identity_prompt_dirty);
        assert!(rules.text_pages.is_empty());
        assert_eq!(rules, oracle);
    }

    #[test]
    fn empty_diff_gives_empty_dirty_set() {
        let state = sample_story(4);
        let diff = diff_states(&state, &state);
        assert!(compute_dirty_set(&state, &state, &diff).is_empty());
        assert!(oracle_dirty_set(&state, &state).is_empty());
    }

    #[test]
    fn style_change_dirties_every_page() {
        let state = sample_story(7);
        let (rules, oracle) = run(
            &state,
            vec![EditOp::SetWorldField {
                field: WorldField::Style,
                value: WorldValue::Text("charcoal sketch".into()),
            }],
        );
        assert_eq!(rules.image_pages, state.page_ids());
        assert_eq!(oracle.image_pages, state.page_ids());
    }

    #[test]
    fn single_constraint_edit_dirties_exactly_that_page() {
        let state = sample_story(10);
        let p3 = state.pages[2].id.clone();
        let (rules, oracle) = run(
            &state,
            vec![EditOp::SetPageConstraint {
                page: p3.clone(),
                key: "tv_position".into(),
                description: "TV on the left".into(),
            }],
        );
        assert_eq!(rules.image_pages, BTreeSet::from([p3.clone()]));
        assert!(rules.text_pages.is_empty());
        assert!(!rules.identity_prompt_dirty);
        assert_eq!(rules, oracle);
    }

    #[test]
    fn invariant_for_unplaced_character_only_touches_identity() {
        let state = sample_story(4);
        let ops = vec![
            EditOp::AddCharacter {
                entry: crate::edit::CharacterDraft {
                    name: "ghost".into(),
                    ..Default::default()
                },
            },
        ];
        let (with_ghost, _) = apply_batch(&state, &EditBatch::user(ops)).unwrap();
        let ghost = with_ghost.characters.last().unwrap().id.clone();
        let (rules, oracle) = run(
            &with_ghost,
            vec![EditOp::AddIdentityInvariant {
                invariant: IdentityInvariant {
                    character: ghost,
                    constraint_text: "is translucent".into(),
                    active: true,
                },
            }],
        );
        assert!(oracle.identity_prompt_dirty);
        assert!(oracle.image_pages.is_empty());
        assert_eq!(rules, oracle);
    }

    #[test]
    fn inactive_invariant_changes_nothing_rendered() {
        let state = sample_story(4);
        let lily = state.characters[0].id.clone();
        let (rules, oracle) = run(
            &state,
            vec![EditOp::AddIdentityInvariant {
                invariant: IdentityInvariant {
                    character: lily,
                    constraint_text: "sometimes hums".into(),
                    active: false,
                },
            }],
        );
        assert!(oracle.is_empty());
        assert_eq!(rules, oracle);
    }
}
