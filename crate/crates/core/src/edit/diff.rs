use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::edit::ops::WorldField;
use crate::ids::{CharacterId, PageId};
use crate::state::{CharacterEntry, IdentityInvariant, PageState, StoryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacterField {
    Name,
    Role,
    Attributes,
    Aliases,
    ReferenceAssets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum CharacterDelta {
    Added,
    Removed,
    Modified { fields: Vec<CharacterField> },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "field", content = "key", rename_all = "snake_case")]
pub enum PageField {
    SceneDescription,
    /// Set membership changed.
    Characters,
    /// Same members, different list order.
    CharacterOrder,
    Constraint(String),
    ConstraintOrder,
    NarrativePhase,
    NarrationAsset,
    ImageAsset,
    Failure,
}

impl PageField {
    pub fn affects_prompt(&self) -> bool {
        matches!(
            self,
            PageField::SceneDescription
                | PageField::Characters
                | PageField::Constraint(_)
                | PageField::NarrativePhase
        )
    }

    pub fn affects_narration(&self) -> bool {
        matches!(
            self,
            PageField::SceneDescription | PageField::Characters | PageField::NarrativePhase
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalChange {
    pub page: PageId,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralChanges {
    pub added: Vec<PageId>,
    pub removed: Vec<PageId>,
    pub moved: Vec<OrdinalChange>,
}

impl StructuralChanges {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.moved.is_empty()
    }
}

/// The net difference between two states.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDiff {
    #[serde(default)]
    pub title_changed: bool,
    #[serde(default)]
    pub character_deltas: BTreeMap<CharacterId, CharacterDelta>,
    /// Same entries, different sheet order.
    #[serde(default)]
    pub characters_reordered: bool,
    /// Characters whose invariant list (active or not) changed.
    #[serde(default)]
    pub changed_invariant_characters: BTreeSet<CharacterId>,
    /// Invariant list interleaving changed without any per-character change.
    #[serde(default)]
    pub invariants_reordered: bool,
    #[serde(default)]
    pub changed_world_fields: BTreeSet<WorldField>,
    #[serde(default)]
    pub prompt_config_changed: bool,
    /// Field-level deltas for pages present on both sides.
    #[serde(default)]
    pub changed_pages: BTreeMap<PageId, Vec<PageField>>,
    #[serde(default)]
    pub structural: StructuralChanges,
    #[serde(default)]
    pub id_sequence_changed: bool,
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        !self.title_changed
            && self.character_deltas.is_empty()
            && !self.characters_reordered
            && self.changed_invariant_characters.is_empty()
            && !self.invariants_reordered
            && self.changed_world_fields.is_empty()
            && !self.prompt_config_changed
            && self.changed_pages.is_empty()
            && self.structural.is_empty()
            && !self.id_sequence_changed
    }

    pub fn changed_character_ids(&self) -> BTreeSet<CharacterId> {
        self.character_deltas.keys().cloned().collect()
    }

    pub fn changed_page_ids(&self) -> BTreeSet<PageId> {
        self.changed_pages.keys().cloned().collect()
    }
}

/// Structural diff of two states. The result is empty iff `old == new`.
pub fn diff_states(old: &StoryState, new: &StoryState) -> StateDiff {
    let mut diff = StateDiff {
        title_changed: old.title != new.title,
        prompt_config_changed: old.prompt_config != new.prompt_config,
        id_sequence_changed: old.id_sequence != new.id_sequence,
        ..StateDiff::default()
    };
    diff_characters(old, new, &mut diff);
    diff_invariants(&old.invariants, &new.invariants, &mut diff);
    diff_world(old, new, &mut diff);
    diff_pages(old, new, &mut diff);
    diff
}

fn diff_characters(old: &StoryState, new: &StoryState, diff: &mut StateDiff) {
    let old_by_id: BTreeMap<&CharacterId, &CharacterEntry> =
        old.characters.iter().map(|c| (&c.id, c)).collect();
    let new_by_id: BTreeMap<&CharacterId, &CharacterEntry> =
        new.characters.iter().map(|c| (&c.id, c)).collect();
    for (id, before) in &old_by_id {
        match new_by_id.get(id) {
            None => {
                diff.character_deltas
                    .insert((*id).clone(), CharacterDelta::Removed);
            }
            Some(after) => {
                let mut fields = Vec::new();
                if before.name != after.name {
                    fields.push(CharacterField::Name);
                }
                if before.role != after.role {
                    fields.push(CharacterField::Role);
                }
                if before.attributes != after.attributes {
                    fields.push(CharacterField::Attributes);
                }
                if before.aliases != after.aliases {
                    fields.push(CharacterField::Aliases);
                }
                if before.reference_assets != after.reference_assets {
                    fields.push(CharacterField::ReferenceAssets);
                }
                if !fields.is_empty() {
                    diff.character_deltas
                        .insert((*id).clone(), CharacterDelta::Modified { fields });
                }
            }
        }
    }
    for id in new_by_id.keys() {
        if !old_by_id.contains_key(id) {
            diff.character_deltas
                .insert((*id).clone(), CharacterDelta::Added);
        }
    }
    // Relative order of the entries present on both sides.
    let old_order: Vec<&CharacterId> = old
        .characters
        .iter()
        .map(|c| &c.id)
        .filter(|id| new_by_id.contains_key(id))
        .collect();
    let new_order: Vec<&CharacterId> = new
        .characters
        .iter()
        .map(|c| &c.id)
        .filter(|id| old_by_id.contains_key(id))
        .collect();
    diff.characters_reordered = old_order != new_order;
}

fn diff_invariants(old: &[IdentityInvariant], new: &[IdentityInvariant], diff: &mut StateDiff) {
    if old == new {
        return;
    }
    let characters: BTreeSet<&CharacterId> =
        old.iter().chain(new.iter()).map(|i| &i.character).collect();
    for c in characters {
        let before: Vec<&IdentityInvariant> = old.iter().filter(|i| &i.character == c).collect();
        let after: Vec<&IdentityInvariant> = new.iter().filter(|i| &i.character == c).collect();
        if before != after {
            diff.changed_invariant_characters.insert(c.clone());
        }
    }
    if diff.changed_invariant_characters.is_empty() {
        diff.invariants_reordered = true;
    }
}

fn diff_world(old: &StoryState, new: &StoryState, diff: &mut StateDiff) {
    let (a, b) = (&old.world, &new.world);
    if a.style != b.style {
        diff.changed_world_fields.insert(WorldField::Style);
    }
    if a.tone != b.tone {
        diff.changed_world_fields.insert(WorldField::Tone);
    }
    if a.recurring_locations != b.recurring_locations {
        diff.changed_world_fields
            .insert(WorldField::RecurringLocations);
    }
    if a.recurring_props != b.recurring_props {
        diff.changed_world_fields.insert(WorldField::RecurringProps);
    }
}

fn diff_pages(old: &StoryState, new: &StoryState, diff: &mut StateDiff) {
    let old_by_id: BTreeMap<&PageId, &PageState> = old.pages.iter().map(|p| (&p.id, p)).collect();
    let new_by_id: BTreeMap<&PageId, &PageState> = new.pages.iter().map(|p| (&p.id, p)).collect();
    for page in &old.pages {
        match new_by_id.get(&page.id) {
            None => diff.structural.removed.push(page.id.clone()),
            Some(after) => {
                if page.ordinal != after.ordinal {
                    diff.structural.moved.push(OrdinalChange {
                        page: page.id.clone(),
                        from: page.ordinal,
                        to: after.ordinal,
                    });
                }
                let fields = page_fields(page, after);
                if !fields.is_empty() {
                    diff.changed_pages.insert(page.id.clone(), fields);
                }
            }
        }
    }
    for page in &new.pages {
        if !old_by_id.contains_key(&page.id) {
            diff.structural.added.push(page.id.clone());
        }
    }
    // List order differing from ordinal order is not reachable through the
    // edit engine, but keep the diff honest for hand-built states.
    if diff.structural.is_empty() && diff.changed_pages.is_empty() {
        let old_order: Vec<&PageId> = old.pages.iter().map(|p| &p.id).collect();
        let new_order: Vec<&PageId> = new.pages.iter().map(|p| &p.id).collect();
        if old_order != new_order {
            for p in &new.pages {
                let from = old_by_id[&p.id].ordinal;
                diff.structural.moved.push(OrdinalChange {
                    page: p.id.clone(),
                    from,
                    to: p.ordinal,
                });
            }
        }
    }
}

fn page_fields(a: &PageState, b: &PageState) -> Vec<PageField> {
    let mut fields = Vec::new();
    if a.scene_description != b.scene_description {
        fields.push(PageField::SceneDescription);
    }
    let set_a: BTreeSet<&CharacterId> = a.characters.iter().collect();
    let set_b: BTreeSet<&CharacterId> = b.characters.iter().collect();
    if set_a != set_b {
        fields.push(PageField::Characters);
    } else if a.characters != b.characters {
        fields.push(PageField::CharacterOrder);
    }
    let keys: BTreeSet<&String> = a
        .constraints
        .iter()
        .chain(b.constraints.iter())
        .map(|c| &c.key)
        .collect();
    for key in keys {
        if a.constraint(key) != b.constraint(key) {
            fields.push(PageField::Constraint(key.clone()));
        }
    }
    if a.constraints != b.constraints && !fields.iter().any(|f| matches!(f, PageField::Constraint(_))) {
        fields.push(PageField::ConstraintOrder);
    }
    if a.narrative_phase != b.narrative_phase {
        fields.push(PageField::NarrativePhase);
    }
    if a.narration_asset != b.narration_asset {
        fields.push(PageField::NarrationAsset);
    }
    if a.image_asset != b.image_asset {
        fields.push(PageField::ImageAsset);
    }
    if a.failure != b.failure {
        fields.push(PageField::Failure);
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::sample_story;

    #[test]
    fn identical_states_have_empty_diff() {
        let s = sample_story(5);
        assert!(diff_states(&s, &s.clone()).is_empty());
    }

    #[test]
    fn character_order_only_change_is_detected() {
        let a = sample_story(3);
        let mut b = a.clone();
        b.pages[0].characters.reverse();
        let d = diff_states(&a, &b);
        assert_eq!(
            d.changed_pages[&a.pages[0].id],
            vec![PageField::CharacterOrder]
        );
    }

    #[test]
    fn invariant_interleaving_change_is_not_empty() {
        let mut a = sample_story(3);
        a.invariants.push(IdentityInvariant {
            character: a.characters[1].id.clone(),
            constraint_text: "beeps softly".into(),
            active: true,
        });
        let mut b = a.clone();
        b.invariants.reverse();
        let d = diff_states(&a, &b);
        assert!(!d.is_empty());
        assert!(d.changed_invariant_characters.is_empty());
        assert!(d.invariants_reordered);
    }
}
