use serde::{Deserialize, Serialize};

use crate::ids::{CharacterId, PageId};
use crate::state::{Attribute, AssetRef, ConstraintSource, IdentityInvariant, NarrativePhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    User,
    Critic,
    Planner,
}

impl Origin {
    pub(crate) fn constraint_source(self) -> ConstraintSource {
        match self {
            Origin::User => ConstraintSource::UserEdit,
            Origin::Critic => ConstraintSource::Critic,
            Origin::Planner => ConstraintSource::Planner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldField {
    Style,
    Tone,
    RecurringLocations,
    RecurringProps,
}

impl WorldField {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "style" => Some(Self::Style),
            "tone" => Some(Self::Tone),
            "recurring_locations" | "locations" => Some(Self::RecurringLocations),
            "recurring_props" | "props" => Some(Self::RecurringProps),
            _ => None,
        }
    }

    pub fn is_list(self) -> bool {
        matches!(self, Self::RecurringLocations | Self::RecurringProps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldValue {
    Text(String),
    List(Vec<String>),
}

/// A character to be added; the engine mints its id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CharacterDraft {
    pub name: String,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub reference_assets: Vec<AssetRef>,
}

/// A page to be inserted; the engine mints its id and ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageDraft {
    pub scene_description: String,
    #[serde(default)]
    pub characters: Vec<CharacterId>,
    #[serde(default)]
    pub constraints: Vec<DraftConstraint>,
    pub narrative_phase: NarrativePhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftConstraint {
    pub key: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    SetCharacterAttribute {
        character: CharacterId,
        key: String,
        value: String,
    },
    AddCharacter {
        entry: CharacterDraft,
    },
    /// Also drops the character from every page and removes its invariants.
    RemoveCharacter {
        character: CharacterId,
    },
    /// Inserts, or updates the `active` flag of an existing (character, text) pair.
    AddIdentityInvariant {
        invariant: IdentityInvariant,
    },
    RemoveIdentityInvariant {
        character: CharacterId,
        constraint_text: String,
    },
    SetWorldField {
        field: WorldField,
        value: WorldValue,
    },
    SetSceneDescription {
        page: PageId,
        text: String,
    },
    SetPageConstraint {
        page: PageId,
        key: String,
        description: String,
    },
    RemovePageConstraint {
        page: PageId,
        key: String,
    },
    AddCharacterToPage {
        page: PageId,
        character: CharacterId,
    },
    RemoveCharacterFromPage {
        page: PageId,
        character: CharacterId,
    },
    /// `after_ordinal` 0 inserts at the front.
    AddPage {
        after_ordinal: u32,
        page: PageDraft,
    },
    RemovePage {
        page: PageId,
    },
    MovePage {
        page: PageId,
        new_ordinal: u32,
    },
    SetNarrativePhase {
        page: PageId,
        phase: NarrativePhase,
    },
}

impl EditOp {
    /// The page this op is scoped to, if it touches exactly one page.
    pub fn page(&self) -> Option<&PageId> {
        match self {
            EditOp::SetSceneDescription { page, .. }
            | EditOp::SetPageConstraint { page, .. }
            | EditOp::RemovePageConstraint { page, .. }
            | EditOp::AddCharacterToPage { page, .. }
            | EditOp::RemoveCharacterFromPage { page, .. }
            | EditOp::RemovePage { page }
            | EditOp::MovePage { page, .. }
            | EditOp::SetNarrativePhase { page, .. } => Some(page),
            _ => None,
        }
    }

    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            EditOp::AddPage { .. } | EditOp::RemovePage { .. } | EditOp::MovePage { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            EditOp::SetCharacterAttribute { .. } => "set_character_attribute",
            EditOp::AddCharacter { .. } => "add_character",
            EditOp::RemoveCharacter { .. } => "remove_character",
            EditOp::AddIdentityInvariant { .. } => "add_identity_invariant",
            EditOp::RemoveIdentityInvariant { .. } => "remove_identity_invariant",
            EditOp::SetWorldField { .. } => "set_world_field",
            EditOp::SetSceneDescription { .. } => "set_scene_description",
            EditOp::SetPageConstraint { .. } => "set_page_constraint",
            EditOp::RemovePageConstraint { .. } => "remove_page_constraint",
            EditOp::AddCharacterToPage { .. } => "add_character_to_page",
            EditOp::RemoveCharacterFromPage { .. } => "remove_character_from_page",
            EditOp::AddPage { .. } => "add_page",
            EditOp::RemovePage { .. } => "remove_page",
            EditOp::MovePage { .. } => "move_page",
            EditOp::SetNarrativePhase { .. } => "set_narrative_phase",
        }
    }
}

/// One turn's worth of edits, applied all-or-nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBatch {
    pub ops: Vec<EditOp>,
    pub origin: Origin,
    #[serde(default)]
    pub note: String,
}

impl EditBatch {
    pub fn new(origin: Origin, ops: Vec<EditOp>) -> Self {
        Self {
            ops,
            origin,
            note: String::new(),
        }
    }

    pub fn user(ops: Vec<EditOp>) -> Self {
        Self::new(Origin::User, ops)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}
