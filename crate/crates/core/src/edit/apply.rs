use crate::edit::diff::{diff_states, StateDiff};
use crate::edit::ops::{EditBatch, EditOp, WorldField, WorldValue};
use crate::edit::EditError;
use crate::state::{CharacterEntry, PageState, StoryState, VisualConstraint};

/// Applies `batch` to a copy of `state`. On any rejection the input is left
/// untouched and the index of the failing op is reported.
pub fn apply_batch(
    state: &StoryState,
    batch: &EditBatch,
) -> Result<(StoryState, StateDiff), EditError> {
    if batch.ops.is_empty() {
        return Err(EditError::EmptyBatch);
    }
    let mut next = state.clone();
    for (op_index, op) in batch.ops.iter().enumerate() {
        apply_op(&mut next, op, batch).map_err(|reason| EditError::Rejected { op_index, reason })?;
        if let Some(violation) = next.validate().violations.into_iter().next() {
            return Err(EditError::Rejected {
                op_index,
                reason: format!("{} would break the story: {}", op.name(), violation.message),
            });
        }
    }
    let diff = diff_states(state, &next);
    Ok((next, diff))
}

fn apply_op(state: &mut StoryState, op: &EditOp, batch: &EditBatch) -> Result<(), String> {
    match op {
        EditOp::SetCharacterAttribute {
            character,
            key,
            value,
        } => {
            if key.trim().is_empty() || value.trim().is_empty() {
                return Err("attribute key and value must be non-empty".into());
            }
            let entry = state
                .character_mut(character)
                .ok_or_else(|| format!("unknown character {character}"))?;
            match entry.attributes.iter_mut().find(|a| &a.key == key) {
                Some(attr) => attr.value = value.clone(),
                None => entry
                    .attributes
                    .push(crate::state::Attribute::new(key.clone(), value.clone())),
            }
        }
        EditOp::AddCharacter { entry } => {
            if entry.name.trim().is_empty() {
                return Err("character name must be non-empty".into());
            }
            let id = state.id_sequence.mint_character();
            state.characters.push(CharacterEntry {
                id,
                name: entry.name.clone(),
                role: entry.role.clone(),
                attributes: entry.attributes.clone(),
                reference_assets: entry.reference_assets.clone(),
                aliases: entry.aliases.clone(),
            });
        }
        EditOp::RemoveCharacter { character } => {
            if state.character(character).is_none() {
                return Err(format!("unknown character {character}"));
            }
            state.characters.retain(|c| &c.id != character);
            state.invariants.retain(|i| &i.character != character);
            for page in &mut state.pages {
                page.characters.retain(|c| c != character);
            }
        }
        EditOp::AddIdentityInvariant { invariant } => {
            if state.character(&invariant.character).is_none() {
                return Err(format!("unknown character {}", invariant.character));
            }
            if invariant.constraint_text.trim().is_empty() {
                return Err("invariant text must be non-empty".into());
            }
            match state.invariants.iter_mut().find(|i| {
                i.character == invariant.character && i.constraint_text == invariant.constraint_text
            }) {
                Some(existing) => existing.active = invariant.active,
                None => state.invariants.push(invariant.clone()),
            }
        }
        EditOp::RemoveIdentityInvariant {
            character,
            constraint_text,
        } => {
            let before = state.invariants.len();
            state
                .invariants
                .retain(|i| !(&i.character == character && &i.constraint_text == constraint_text));
            if state.invariants.len() == before {
                return Err(format!(
                    "no invariant {constraint_text:?} recorded for {character}"
                ));
            }
        }
        EditOp::SetWorldField { field, value } => set_world_field(state, *field, value)?,
        EditOp::SetSceneDescription { page, text } => {
            if text.trim().is_empty() {
                return Err("scene description must be non-empty".into());
            }
            page_mut(state, page)?.scene_description = text.clone();
        }
        EditOp::SetPageConstraint {
            page,
            key,
            description,
        } => {
            if key.trim().is_empty() || description.trim().is_empty() {
                return Err("constraint key and description must be non-empty".into());
            }
            let source = batch.origin.constraint_source();
            let page = page_mut(state, page)?;
            match page.constraints.iter_mut().find(|c| &c.key == key) {
                // Re-stating an identical description is a no-op, provenance included.
                Some(existing) if &existing.description == description => {}
                Some(existing) => {
                    existing.description = description.clone();
                    existing.source = source;
                }
                None => {
                    let at = page
                        .constraints
                        .iter()
                        .position(|c| c.key.as_str() > key.as_str())
                        .unwrap_or(page.constraints.len());
                    page.constraints.insert(
                        at,
                        VisualConstraint {
                            key: key.clone(),
                            description: description.clone(),
                            source,
                        },
                    );
                }
            }
        }
        EditOp::RemovePageConstraint { page, key } => {
            let page = page_mut(state, page)?;
            let before = page.constraints.len();
            page.constraints.retain(|c| &c.key != key);
            if page.constraints.len() == before {
                return Err(format!("page {} has no constraint {key:?}", page.id));
            }
        }
        EditOp::AddCharacterToPage { page, character } => {
            if state.character(character).is_none() {
                return Err(format!("unknown character {character}"));
            }
            let page = page_mut(state, page)?;
            if !page.characters.contains(character) {
                page.characters.push(character.clone());
            }
        }
        EditOp::RemoveCharacterFromPage { page, character } => {
            let page = page_mut(state, page)?;
            if !page.characters.contains(character) {
                return Err(format!("{character} is not on page {}", page.id));
            }
            page.characters.retain(|c| c != character);
        }
        EditOp::AddPage {
            after_ordinal,
            page,
        } => {
            let n = state.pages.len() as u32;
            if *after_ordinal > n {
                return Err(format!("cannot insert after ordinal {after_ordinal} of {n}"));
            }
            if page.scene_description.trim().is_empty() {
                return Err("scene description must be non-empty".into());
            }
            for c in &page.characters {
                if state.character(c).is_none() {
                    return Err(format!("unknown character {c}"));
                }
            }
            let source = batch.origin.constraint_source();
            let mut constraints: Vec<VisualConstraint> = page
                .constraints
                .iter()
                .map(|c| VisualConstraint {
                    key: c.key.clone(),
                    description: c.description.clone(),
                    source,
                })
                .collect();
            constraints.sort_by(|a, b| a.key.cmp(&b.key));
            let mut characters = page.characters.clone();
            let mut seen = std::collections::HashSet::new();
            characters.retain(|c| seen.insert(c.clone()));
            let id = state.id_sequence.mint_page();
            state.pages.insert(
                *after_ordinal as usize,
                PageState {
                    id,
                    ordinal: 0,
                    scene_description: page.scene_description.clone(),
                    characters,
                    constraints,
                    narrative_phase: page.narrative_phase,
                    narration_asset: None,
                    image_asset: None,
                    failure: None,
                },
            );
            state.renumber();
        }
        EditOp::RemovePage { page } => {
            let at = position(state, page)?;
            state.pages.remove(at);
            state.renumber();
        }
        EditOp::MovePage { page, new_ordinal } => {
            let n = state.pages.len() as u32;
            if *new_ordinal == 0 || *new_ordinal > n {
                return Err(format!("ordinal {new_ordinal} outside 1..={n}"));
            }
            let at = position(state, page)?;
            let moved = state.pages.remove(at);
            state.pages.insert(*new_ordinal as usize - 1, moved);
            state.renumber();
        }
        EditOp::SetNarrativePhase { page, phase } => {
            page_mut(state, page)?.narrative_phase = *phase;
        }
    }
    Ok(())
}

fn set_world_field(state: &mut StoryState, field: WorldField, value: &WorldValue) -> Result<(), String> {
    let world = &mut state.world;
    match (field, value) {
        (WorldField::Style, WorldValue::Text(text)) => {
            if text.trim().is_empty() {
                return Err("style must be non-empty".into());
            }
            world.style = text.clone();
        }
        (WorldField::Tone, WorldValue::Text(text)) => world.tone = text.clone(),
        (WorldField::RecurringLocations, WorldValue::List(items)) => {
            world.recurring_locations = clean_list(items)?
        }
        (WorldField::RecurringProps, WorldValue::List(items)) => {
            world.recurring_props = clean_list(items)?
        }
        (field, _) => {
            return Err(format!(
                "{field:?} expects a {}",
                if field.is_list() { "list" } else { "text value" }
            ))
        }
    }
    Ok(())
}

fn clean_list(items: &[String]) -> Result<Vec<String>, String> {
    if items.iter().any(|i| i.trim().is_empty()) {
        return Err("list entries must be non-empty".into());
    }
    Ok(items.to_vec())
}

fn position(state: &StoryState, page: &crate::ids::PageId) -> Result<usize, String> {
    state
        .pages
        .iter()
        .position(|p| &p.id == page)
        .ok_or_else(|| format!("unknown page {page}"))
}

fn page_mut<'a>(
    state: &'a mut StoryState,
    page: &crate::ids::PageId,
) -> Result<&'a mut PageState, String> {
    state
        .page_mut(page)
        .ok_or_else(|| format!("unknown page {page}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::ops::{EditBatch, PageDraft};
    use crate::ids::{CharacterId, PageId};
    use crate::canonical::canonical_json;
    use crate::state::NarrativePhase;
    use crate::testkit::sample_story;

    #[test]
    fn page_constraint_touches_only_that_page() {
        let state = sample_story(10);
        let p3 = state.pages[2].id.clone();
        let batch = EditBatch::user(vec![EditOp::SetPageConstraint {
            page: p3.clone(),
            key: "coat".into(),
            description: "same yellow coat as on page 1".into(),
        }]);
        let (next, diff) = apply_batch(&state, &batch).unwrap();
        assert_eq!(diff.changed_page_ids().into_iter().collect::<Vec<_>>(), vec![p3.clone()]);
        assert!(diff.character_deltas.is_empty());
        assert!(diff.changed_world_fields.is_empty());
        for (old, new) in state.pages.iter().zip(&next.pages) {
            if old.id != p3 {
                assert_eq!(canonical_json(old).unwrap(), canonical_json(new).unwrap());
            }
        }
    }

    #[test]
    fn restating_existing_value_gives_empty_diff() {
        let state = sample_story(4);
        let lily = &state.characters[0];
        let attr = &lily.attributes[0];
        let batch = EditBatch::user(vec![EditOp::SetCharacterAttribute {
            character: lily.id.clone(),
            key: attr.key.clone(),
            value: attr.value.clone(),
        }]);
        let (next, diff) = apply_batch(&state, &batch).unwrap();
        assert!(diff.is_empty());
        assert_eq!(next, state);
    }

    #[test]
    fn edit_on_removed_character_is_rejected_atomically() {
        let state = sample_story(4);
        let before = canonical_json(&state).unwrap();
        let victim = state.characters[1].id.clone();
        let batch = EditBatch::user(vec![
            EditOp::RemoveCharacter {
                character: victim.clone(),
            },
            EditOp::SetCharacterAttribute {
                character: victim,
                key: "eyes".into(),
                value: "green".into(),
            },
        ]);
        match apply_batch(&state, &batch) {
            Err(EditError::Rejected { op_index, .. }) => assert_eq!(op_index, 1),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert_eq!(canonical_json(&state).unwrap(), before);
    }

    #[test]
    fn empty_batch_rejected() {
        let state = sample_story(2);
        assert_eq!(
            apply_batch(&state, &EditBatch::user(vec![])).unwrap_err(),
            EditError::EmptyBatch
        );
    }

    #[test]
    fn move_page_shifts_displaced_pages_toward_vacated_slot() {
        let mut state = sample_story(6);
        for p in &mut state.pages {
            p.narrative_phase = NarrativePhase::Develop;
        }
        let ids: Vec<PageId> = state.pages.iter().map(|p| p.id.clone()).collect();
        let batch = EditBatch::user(vec![EditOp::MovePage {
            page: ids[1].clone(),
            new_ordinal: 5,
        }]);
        let (next, diff) = apply_batch(&state, &batch).unwrap();
        let order: Vec<&PageId> = next.pages.iter().map(|p| &p.id).collect();
        assert_eq!(
            order,
            vec![&ids[0], &ids[2], &ids[3], &ids[4], &ids[1], &ids[5]]
        );
        assert!(next.validate().is_valid());
        assert_eq!(diff.structural.moved.len(), 4);
    }

    #[test]
    fn move_breaking_phase_order_is_rejected() {
        let state = sample_story(10);
        let first = state.pages[0].id.clone();
        let batch = EditBatch::user(vec![EditOp::MovePage {
            page: first,
            new_ordinal: 10,
        }]);
        assert!(matches!(
            apply_batch(&state, &batch),
            Err(EditError::Rejected { op_index: 0, .. })
        ));
    }

    #[test]
    fn add_page_mints_fresh_id_even_after_removal() {
        let state = sample_story(3);
        let last = state.pages[2].id.clone();
        let draft = PageDraft {
            scene_description: "a quiet ending".into(),
            characters: vec![],
            constraints: vec![],
            narrative_phase: NarrativePhase::Resolve,
        };
        let batch = EditBatch::user(vec![
            EditOp::RemovePage { page: last.clone() },
            EditOp::AddPage {
                after_ordinal: 2,
                page: draft,
            },
        ]);
        let (next, diff) = apply_batch(&state, &batch).unwrap();
        assert_eq!(next.pages.len(), 3);
        assert_ne!(next.pages[2].id, last);
        assert_eq!(diff.structural.added, vec![next.pages[2].id.clone()]);
        assert_eq!(diff.structural.removed, vec![last]);
    }

    #[test]
    fn remove_character_cascades_to_pages_and_invariants() {
        let state = sample_story(6);
        let lily = state.characters[0].id.clone();
        let batch = EditBatch::user(vec![EditOp::RemoveCharacter {
            character: lily.clone(),
        }]);
        let (next, _) = apply_batch(&state, &batch).unwrap();
        assert!(next.pages.iter().all(|p| !p.characters.contains(&lily)));
        assert!(next.invariants.iter().all(|i| i.character != lily));
        assert!(next.validate().is_valid());
    }

    #[test]
    fn world_field_kind_mismatch_rejected() {
        let state = sample_story(2);
        let batch = EditBatch::user(vec![EditOp::SetWorldField {
            field: WorldField::Style,
            value: WorldValue::List(vec!["x".into()]),
        }]);
        assert!(apply_batch(&state, &batch).is_err());
        let batch = EditBatch::user(vec![EditOp::SetWorldField {
            field: WorldField::Style,
            value: WorldValue::Text("  ".into()),
        }]);
        assert!(apply_batch(&state, &batch).is_err());
    }

    #[test]
    fn unknown_page_rejected() {
        let state = sample_story(2);
        let batch = EditBatch::user(vec![EditOp::AddCharacterToPage {
            page: PageId::new("p77"),
            character: CharacterId::new("c1"),
        }]);
        assert!(apply_batch(&state, &batch).is_err());
    }
}
