//! The explicit story state: character sheet, world settings and ordered
//! page states.
//!
//! `StoryState` values are plain data. They are only ever replaced wholesale
//! by the edit engine, so a snapshot can be shared between readers freely.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CharacterId, IdSequence, PageId, RevisionId, StoryId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub key: String,
    pub value: String,
}

impl Attribute {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    NarrationText,
    PageImage,
    ReferenceImage,
}

/// Pointer to a stored asset. `uri` is relative to the project root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub kind: AssetKind,
    pub uri: String,
    pub content_hash: String,
    pub revision: RevisionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterEntry {
    pub id: CharacterId,
    pub name: String,
    #[serde(default)]
    pub role: String,
    /// Insertion-ordered; prompt compilation renders values in this order.
    #[serde(default)]
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub reference_assets: Vec<AssetRef>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl CharacterEntry {
    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.key == key)
            .map(|a| a.value.as_str())
    }
}

/// A persistent constraint on one character, e.g. "always wears a yellow raincoat".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityInvariant {
    pub character: CharacterId,
    pub constraint_text: String,
    pub active: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSettings {
    pub style: String,
    #[serde(default)]
    pub tone: String,
    #[serde(default)]
    pub recurring_locations: Vec<String>,
    #[serde(default)]
    pub recurring_props: Vec<String>,
}

/// The frame suffix used by the benchmark dataset format.
pub const QUALITY_CLAUSE: &str = "captured as a vivid and coherent moment with cinematic lighting, clear spatial context, and strong visual continuity";

/// Rendering switches that sit next to the world settings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Appended to every page prompt when set.
    #[serde(default)]
    pub quality_clause: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    UserEdit,
    Planner,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualConstraint {
    pub key: String,
    pub description: String,
    pub source: ConstraintSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrativePhase {
    Introduce,
    Develop,
    Resolve,
}

impl NarrativePhase {
    pub const ALL: [NarrativePhase; 3] = [Self::Introduce, Self::Develop, Self::Resolve];

    /// The clause rendered at the end of a page prompt.
    pub fn clause(self) -> &'static str {
        match self {
            Self::Introduce => "introducing the scene",
            Self::Develop => "developing the environment",
            Self::Resolve => "bringing the scene to a calm resolution",
        }
    }

    pub fn from_clause(clause: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.clause() == clause)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Introduce => "introduce",
            Self::Develop => "develop",
            Self::Resolve => "resolve",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "introduce" => Some(Self::Introduce),
            "develop" => Some(Self::Develop),
            "resolve" => Some(Self::Resolve),
            _ => None,
        }
    }
}

/// How a phase sequence is laid out over `n` pages when nobody says otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub introduce_fraction: f64,
    pub resolve_fraction: f64,
}

impl Default for PhaseSplit {
    fn default() -> Self {
        Self {
            introduce_fraction: 0.2,
            resolve_fraction: 0.4,
        }
    }
}

impl PhaseSplit {
    /// ⌈f·n⌉ introduce pages, ⌈g·n⌉ resolve pages (clamped so the two blocks
    /// never overlap), develop in between.
    pub fn phases(&self, n: usize) -> Vec<NarrativePhase> {
        let ceil = |fraction: f64| (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
        let intro = ceil(self.introduce_fraction).min(n);
        let resolve = ceil(self.resolve_fraction).min(n - intro);
        (0..n)
            .map(|i| {
                if i < intro {
                    NarrativePhase::Introduce
                } else if i >= n - resolve {
                    NarrativePhase::Resolve
                } else {
                    NarrativePhase::Develop
                }
            })
            .collect()
    }
}

/// Marks a page whose last generation attempt failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFailure {
    pub image: bool,
    pub text: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageState {
    pub id: PageId,
    pub ordinal: u32,
    pub scene_description: String,
    #[serde(default)]
    pub characters: Vec<CharacterId>,
    #[serde(default)]
    pub constraints: Vec<VisualConstraint>,
    pub narrative_phase: NarrativePhase,
    #[serde(default)]
    pub narration_asset: Option<AssetRef>,
    #[serde(default)]
    pub image_asset: Option<AssetRef>,
    #[serde(default)]
    pub failure: Option<PageFailure>,
}

impl PageState {
    pub fn constraint(&self, key: &str) -> Option<&VisualConstraint> {
        self.constraints.iter().find(|c| c.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryState {
    pub id: StoryId,
    pub title: String,
    pub characters: Vec<CharacterEntry>,
    #[serde(default)]
    pub invariants: Vec<IdentityInvariant>,
    pub world: WorldSettings,
    #[serde(default)]
    pub prompt_config: PromptConfig,
    pub pages: Vec<PageState>,
    #[serde(default)]
    pub id_sequence: IdSequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("unknown character {0}")]
    UnknownCharacter(CharacterId),
    #[error("unknown page {0}")]
    UnknownPage(PageId),
    #[error("surface {surface:?} matches several characters: {candidates:?}")]
    AmbiguousAlias {
        surface: String,
        candidates: Vec<CharacterId>,
    },
}

impl StoryState {
    /// An empty story with the given style. Valid, but not generatable.
    pub fn empty(id: StoryId, title: impl Into<String>, style: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            characters: Vec::new(),
            invariants: Vec::new(),
            world: WorldSettings {
                style: style.into(),
                ..WorldSettings::default()
            },
            prompt_config: PromptConfig::default(),
            pages: Vec::new(),
            id_sequence: IdSequence::default(),
        }
    }

    pub fn character(&self, id: &CharacterId) -> Option<&CharacterEntry> {
        self.characters.iter().find(|c| &c.id == id)
    }

    pub fn character_mut(&mut self, id: &CharacterId) -> Option<&mut CharacterEntry> {
        self.characters.iter_mut().find(|c| &c.id == id)
    }

    pub fn page(&self, id: &PageId) -> Option<&PageState> {
        self.pages.iter().find(|p| &p.id == id)
    }

    pub fn page_mut(&mut self, id: &PageId) -> Option<&mut PageState> {
        self.pages.iter_mut().find(|p| &p.id == id)
    }

    pub fn page_by_ordinal(&self, ordinal: u32) -> Option<&PageState> {
        self.pages.iter().find(|p| p.ordinal == ordinal)
    }

    pub fn page_ids(&self) -> BTreeSet<PageId> {
        self.pages.iter().map(|p| p.id.clone()).collect()
    }

    /// Pages in ordinal order (stable for ties).
    pub fn pages_in_order(&self) -> Vec<&PageState> {
        let mut pages: Vec<&PageState> = self.pages.iter().collect();
        pages.sort_by_key(|p| p.ordinal);
        pages
    }

    /// Rewrites ordinals to 1..N following the current list order.
    pub(crate) fn renumber(&mut self) {
        for (i, page) in self.pages.iter_mut().enumerate() {
            page.ordinal = i as u32 + 1;
        }
    }

    /// Active invariant texts for one character, in list order.
    pub fn active_invariants(&self, character: &CharacterId) -> Vec<&str> {
        self.invariants
            .iter()
            .filter(|inv| inv.active && &inv.character == character)
            .map(|inv| inv.constraint_text.as_str())
            .collect()
    }

    /// Exactly the pages whose character list contains `character`.
    pub fn pages_referencing(
        &self,
        character: &CharacterId,
    ) -> Result<BTreeSet<PageId>, StateError> {
        if self.character(character).is_none() {
            return Err(StateError::UnknownCharacter(character.clone()));
        }
        Ok(self.character_index().remove(character).unwrap_or_default())
    }

    /// Character → pages index for the whole story.
    pub fn character_index(&self) -> BTreeMap<CharacterId, BTreeSet<PageId>> {
        let mut index: BTreeMap<CharacterId, BTreeSet<PageId>> = BTreeMap::new();
        for page in &self.pages {
            for c in &page.characters {
                index.entry(c.clone()).or_default().insert(page.id.clone());
            }
        }
        index
    }

    /// Case-insensitive lookup over names and aliases. A leading article is
    /// ignored on both sides, so "the robot" finds a character named "robot".
    pub fn resolve_alias(&self, surface: &str) -> Result<Option<CharacterId>, StateError> {
        let key = surface_key(surface);
        if key.is_empty() {
            return Ok(None);
        }
        let candidates: Vec<CharacterId> = self
            .characters
            .iter()
            .filter(|c| {
                surface_key(&c.name) == key || c.aliases.iter().any(|a| surface_key(a) == key)
            })
            .map(|c| c.id.clone())
            .collect();
        match candidates.len() {
            0 => Ok(None),
            1 => Ok(candidates.into_iter().next()),
            _ => Err(StateError::AmbiguousAlias {
                surface: surface.to_owned(),
                candidates,
            }),
        }
    }

    /// Checks every invariant. Violations are data, so this never fails.
    pub fn validate(&self) -> ValidationReport {
        crate::validate::validate(self)
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalized lookup key for a character surface form: lowercase, single
/// spaces, leading article removed.
pub fn surface_key(surface: &str) -> String {
    let lowered = surface.to_lowercase();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    if words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

pub fn strip_article(surface: &str) -> &str {
    let trimmed = surface.trim();
    for article in ARTICLES {
        if trimmed.len() > article.len() + 1 {
            let (head, rest) = trimmed.split_at(article.len());
            if head.eq_ignore_ascii_case(article) && rest.starts_with(' ') {
                return rest.trim_start();
            }
        }
    }
    trimmed
}

pub use crate::validate::{ValidationReport, Violation, ViolationCode};
