//! Deterministic state → prompt mapping.
//!
//! Identity prompt (P₀), clause order fixed:
//!
//! ```text
//! <Style head>[ of <character>; <character>...].[ Tone: <tone>.][ Recurring locations: <l1>, <l2>.][ Recurring props: <p1>.][ <Name>: <invariant>.]...
//! ```
//!
//! * the style head is the style prefixed with "A"/"An", unless the style
//!   already starts with an article;
//! * a character renders as `<A|An> <name>` (bare name when it is capitalized)
//!   followed by ` with <attr values>` joined as an English list, in stored order;
//! * characters appear in sheet order; active invariants are grouped by
//!   character in sheet order, each group in list order.
//!
//! Page prompt (Pᵢ), comma-joined:
//!
//! ```text
//! <scene>[, featuring <names not already mentioned in the scene>][, <constraint>...], <phase clause>[, <quality clause>]
//! ```
//!
//! Constraints render in key order. Attribute values never appear in a page
//! prompt unless the user wrote them into the scene or a constraint.
//!
//! Each page additionally gets a scoped identity prompt: the same template as
//! P₀ restricted to the characters on that page. The scoped identity plus the
//! page prompt is the page's effective prompt, i.e. everything its image
//! depends on.

use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_json, sha256_hex};
use crate::ids::{CharacterId, PageId};
use crate::prompt::PromptError;
use crate::state::{CharacterEntry, PageState, StoryState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSource {
    World,
    Character { id: CharacterId },
    Invariant { character: CharacterId, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityPrompt {
    pub text: String,
    pub sources: Vec<PromptSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PagePrompt {
    pub page: PageId,
    pub text: String,
    pub phase_suffix: String,
    /// Identity prompt restricted to this page's characters.
    pub scoped_identity: String,
}

impl PagePrompt {
    /// Everything the page's image is conditioned on.
    pub fn effective_text(&self) -> String {
        format!("{}\n{}", self.scoped_identity, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub identity: IdentityPrompt,
    pub pages: Vec<PagePrompt>,
    pub state_fingerprint: String,
}

impl PromptBundle {
    pub fn page(&self, id: &PageId) -> Option<&PagePrompt> {
        self.pages.iter().find(|p| &p.page == id)
    }
}

/// Compiles every prompt. Rejects stories with no pages.
pub fn compile(state: &StoryState) -> Result<PromptBundle, PromptError> {
    if state.pages.is_empty() {
        return Err(PromptError::EmptyStory);
    }
    Ok(compile_any(state))
}

/// Like [`compile`] but accepts empty stories (used when diffing states).
pub(crate) fn compile_any(state: &StoryState) -> PromptBundle {
    let pages = state
        .pages_in_order()
        .into_iter()
        .map(|p| render_page(state, p))
        .collect();
    PromptBundle {
        identity: identity_prompt(state),
        pages,
        state_fingerprint: fingerprint(state),
    }
}

pub fn compile_page(state: &StoryState, page: &PageId) -> Result<PagePrompt, PromptError> {
    let page = state
        .page(page)
        .ok_or_else(|| PromptError::UnknownPage(page.clone()))?;
    Ok(render_page(state, page))
}

pub fn fingerprint(state: &StoryState) -> String {
    let json = canonical_json(state).expect("story state serializes");
    sha256_hex(json.as_bytes())
}

pub fn identity_prompt(state: &StoryState) -> IdentityPrompt {
    let characters: Vec<&CharacterEntry> = state.characters.iter().collect();
    let mut sources = vec![PromptSource::World];
    for c in &characters {
        sources.push(PromptSource::Character { id: c.id.clone() });
    }
    for c in &characters {
        for text in state.active_invariants(&c.id) {
            sources.push(PromptSource::Invariant {
                character: c.id.clone(),
                text: text.to_owned(),
            });
        }
    }
    IdentityPrompt {
        text: render_identity(state, &characters),
        sources,
    }
}

fn scoped_identity(state: &StoryState, page: &PageState) -> String {
    let on_page: Vec<&CharacterEntry> = state
        .characters
        .iter()
        .filter(|c| page.characters.contains(&c.id))
        .collect();
    render_identity(state, &on_page)
}

fn render_identity(state: &StoryState, characters: &[&CharacterEntry]) -> String {
    let world = &state.world;
    let mut text = style_head(&world.style);
    if !characters.is_empty() {
        let clauses: Vec<String> = characters.iter().map(|c| character_clause(c)).collect();
        text.push_str(" of ");
        text.push_str(&clauses.join("; "));
    }
    text.push('.');
    if !world.tone.trim().is_empty() {
        text.push_str(&format!(" Tone: {}.", world.tone));
    }
    if !world.recurring_locations.is_empty() {
        text.push_str(&format!(
            " Recurring locations: {}.",
            world.recurring_locations.join(", ")
        ));
    }
    if !world.recurring_props.is_empty() {
        text.push_str(&format!(
            " Recurring props: {}.",
            world.recurring_props.join(", ")
        ));
    }
    for c in characters {
        for invariant in state.active_invariants(&c.id) {
            text.push_str(&format!(" {}: {}.", c.name, invariant));
        }
    }
    text
}

fn render_page(state: &StoryState, page: &PageState) -> PagePrompt {
    let mut parts: Vec<String> = vec![page.scene_description.clone()];
    let unmentioned: Vec<String> = state
        .characters
        .iter()
        .filter(|c| page.characters.contains(&c.id))
        .filter(|c| !mentions(&page.scene_description, &c.name))
        .map(|c| c.name.clone())
        .collect();
    if !unmentioned.is_empty() {
        parts.push(format!("featuring {}", english_list(&unmentioned)));
    }
    let mut constraints: Vec<_> = page.constraints.iter().collect();
    constraints.sort_by(|a, b| a.key.cmp(&b.key));
    parts.extend(constraints.into_iter().map(|c| c.description.clone()));
    let phase_suffix = page.narrative_phase.clause().to_owned();
    parts.push(phase_suffix.clone());
    if let Some(quality) = &state.prompt_config.quality_clause {
        parts.push(quality.clone());
    }
    PagePrompt {
        page: page.id.clone(),
        text: parts.join(", "),
        phase_suffix,
        scoped_identity: scoped_identity(state, page),
    }
}

pub(crate) fn style_head(style: &str) -> String {
    let style = style.trim();
    if starts_with_article(style) {
        style.to_owned()
    } else {
        format!("{} {}", indefinite_article(style), style)
    }
}

fn character_clause(c: &CharacterEntry) -> String {
    let mut clause = subject_phrase(&c.name);
    if !c.attributes.is_empty() {
        let values: Vec<String> = c.attributes.iter().map(|a| a.value.clone()).collect();
        clause.push_str(" with ");
        clause.push_str(&english_list(&values));
    }
    clause
}

/// "phoenix" → "A phoenix"; "owl" → "An owl"; "Tim" → "Tim".
pub(crate) fn subject_phrase(name: &str) -> String {
    let name = name.trim();
    let capitalized = name.chars().next().is_some_and(char::is_uppercase);
    if capitalized || starts_with_article(name) {
        name.to_owned()
    } else {
        format!("{} {}", indefinite_article(name), name)
    }
}

pub(crate) fn indefinite_article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "An",
        _ => "A",
    }
}

pub(crate) fn starts_with_article(text: &str) -> bool {
    let first = text.split_whitespace().next().unwrap_or("");
    text.contains(' ') && ["a", "an", "the"].contains(&first.to_ascii_lowercase().as_str())
}

pub(crate) fn english_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [rest @ .., last] => format!("{}, and {last}", rest.join(", ")),
    }
}

/// Case-insensitive whole-word containment.
pub(crate) fn mentions(haystack: &str, needle: &str) -> bool {
    let needle = needle.trim().to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let hay = haystack.to_lowercase();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut start = 0;
    while let Some(found) = hay[start..].find(&needle) {
        let at = start + found;
        let end = at + needle.len();
        let before_ok = hay[..at].chars().next_back().is_none_or(|c| !is_word(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word(c));
        if before_ok && after_ok {
            return true;
        }
        start = at + hay[at..].chars().next().map_or(1, char::len_utf8);
    }
    false
}
