//! Offline rule engine answering every agent schema.
//!
//! * planner: noun phrases after an article (and capitalized words) become
//!   characters, article phrases after a preposition become locations; scenes
//!   come from per-phase templates;
//! * coreference: mentions cluster when equal up to a leading article;
//! * edit requests: a small clause grammar (`on page N, X should wear Y`,
//!   `the T should be on the left`, `X has green eyes throughout the story`,
//!   `X always ...`, `make the style ...`, `add/remove X to/from page N`);
//! * critic: reads the prompt embedded in a mock image and reports every
//!   character attribute value missing from it.

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::agents::{
    BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse, COREFERENCE_SCHEMA,
    CRITIC_SCHEMA, EDIT_REQUEST_SCHEMA, NARRATION_SCHEMA, PLANNER_SCHEMA,
};
use crate::generation::{extract_mock_prompt, mock_narration, NarrationRequest};
use crate::prompt::{english_list, mentions};
use crate::state::{strip_article, surface_key, NarrativePhase};

const ARTICLES: &[&str] = &["a", "an", "the"];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "through", "across", "near", "under", "into", "to", "from", "with", "by",
    "over", "inside", "around", "beside", "behind", "along", "of", "for",
];
const CONNECTIVES: &[&str] = &[
    "and", "or", "but", "who", "that", "while", "when", "where", "as", "then", "story", "about",
];
const LOOKS: &[&str] = &[
    "a yellow raincoat",
    "a blue scarf",
    "a green cap",
    "a red backpack",
    "round silver glasses",
    "a striped sweater",
    "a patched brown coat",
    "a purple hat",
];
const INTRODUCE: &[&str] = &[
    "setting out on an ordinary morning",
    "discovering something unusual",
    "meeting for the first time",
];
const DEVELOP: &[&str] = &[
    "exploring the surroundings",
    "facing a small setback",
    "working out a plan together",
    "following a new clue",
    "crossing unfamiliar ground",
    "finding an unexpected helper",
];
const RESOLVE: &[&str] = &[
    "finding the way back",
    "sharing a quiet moment",
    "celebrating together",
    "saying goodnight as the day ends",
];

#[derive(Debug, Clone)]
pub struct MockChatBackend {
    config: BackendConfig,
}

impl Default for MockChatBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockChatBackend {
    pub fn new() -> Self {
        Self {
            config: BackendConfig {
                endpoint: "mock://chat".into(),
                model: "mock-rules".into(),
                ..BackendConfig::default()
            },
        }
    }
}

impl ChatBackend for MockChatBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let input: Value = serde_json::from_str(&request.user_text)
            .or_else(|_| {
                // Re-prompts append prose after the JSON object.
                let end = request.user_text.rfind("\n\nYour previous reply").unwrap_or(0);
                serde_json::from_str(&request.user_text[..end])
            })
            .map_err(|e| BackendError::Protocol(format!("mock expects JSON input: {e}")))?;
        let reply = match request.response_schema_id.as_str() {
            PLANNER_SCHEMA => planner(&input),
            COREFERENCE_SCHEMA => coreference(&input),
            EDIT_REQUEST_SCHEMA => edit_request(&input),
            CRITIC_SCHEMA => {
                let image = request
                    .attachments
                    .first()
                    .and_then(|a| extract_mock_prompt(&a.bytes));
                critic(&input, image.as_deref())
            }
            NARRATION_SCHEMA => return narration(&input).map(|text| ChatResponse { text }),
            other => return Err(BackendError::Protocol(format!("mock has no rules for {other}"))),
        };
        Ok(ChatResponse {
            text: reply.to_string(),
        })
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-').to_owned())
        .filter(|w| !w.is_empty())
        .collect()
}

fn is_in(word: &str, list: &[&str]) -> bool {
    list.contains(&word.to_lowercase().as_str())
}

fn looks_like_verb(word: &str) -> bool {
    let w = word.to_lowercase();
    w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us")
}

struct Extracted {
    characters: Vec<String>,
    locations: Vec<String>,
}

fn extract(prompt: &str) -> Extracted {
    let tokens = words(prompt);
    let mut characters: Vec<String> = Vec::new();
    let mut locations: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let w = &tokens[i];
        if is_in(w, ARTICLES) {
            let mut phrase = Vec::new();
            let mut j = i + 1;
            while j < tokens.len() && phrase.len() < 3 {
                let t = &tokens[j];
                if is_in(t, ARTICLES) || is_in(t, PREPOSITIONS) || is_in(t, CONNECTIVES) {
                    break;
                }
                if !phrase.is_empty() && looks_like_verb(t) {
                    break;
                }
                phrase.push(t.to_lowercase());
                j += 1;
            }
            if !phrase.is_empty() {
                let after_preposition = i > 0 && is_in(&tokens[i - 1], PREPOSITIONS);
                if after_preposition {
                    locations.push(format!("the {}", phrase.join(" ")));
                } else {
                    characters.push(phrase.join(" "));
                }
            }
            i = j.max(i + 1);
            continue;
        }
        let capitalized = w.chars().next().is_some_and(char::is_uppercase);
        if capitalized && !is_in(w, PREPOSITIONS) && !is_in(w, CONNECTIVES) && (i > 0 || tokens.len() > 1) {
            characters.push(w.clone());
        }
        i += 1;
    }
    if characters.is_empty() {
        if let Some(first) = tokens
            .iter()
            .find(|t| !is_in(t, ARTICLES) && !is_in(t, PREPOSITIONS) && !is_in(t, CONNECTIVES))
        {
            characters.push(first.to_lowercase());
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    characters.retain(|c| seen.insert(surface_key(c)));
    let mut seen = std::collections::BTreeSet::new();
    locations.retain(|l| seen.insert(surface_key(l)));
    Extracted {
        characters,
        locations,
    }
}

fn pick<'a>(pool: &'a [&'a str], seed: &str) -> &'a str {
    let digest = Sha256::digest(seed.as_bytes());
    pool[digest[0] as usize % pool.len()]
}

/// How a page mentions a character: proper names bare, nouns with "the".
fn page_surface(name: &str) -> String {
    if name.chars().next().is_some_and(char::is_uppercase) {
        name.to_owned()
    } else {
        format!("the {name}")
    }
}

fn planner(input: &Value) -> Value {
    let prompt = input["prompt"].as_str().unwrap_or_default();
    let phases: Vec<NarrativePhase> =
        serde_json::from_value(input["phases"].clone()).unwrap_or_default();
    let found = extract(prompt);
    let place = found.locations.first().cloned();
    let mut counters = [0usize; 3];
    let pages: Vec<Value> = phases
        .iter()
        .enumerate()
        .map(|(i, phase)| {
            let on_page: Vec<String> = if i == 0 && found.characters.len() > 1 && phases.len() > 1 {
                vec![found.characters[0].clone()]
            } else {
                found.characters.clone()
            };
            let surfaces: Vec<String> = on_page.iter().map(|c| page_surface(c)).collect();
            let (pool, slot) = match phase {
                NarrativePhase::Introduce => (INTRODUCE, 0),
                NarrativePhase::Develop => (DEVELOP, 1),
                NarrativePhase::Resolve => (RESOLVE, 2),
            };
            let action = pool[counters[slot] % pool.len()];
            counters[slot] += 1;
            let mut scene = format!("{} {action}", english_list(&surfaces));
            if let Some(place) = &place {
                scene.push_str(&format!(" in {place}"));
            }
            let mut chars = scene.chars();
            let scene = match chars.next() {
                Some(c) => c.to_uppercase().chain(chars).collect(),
                None => scene,
            };
            json!({
                "scene_description": scene,
                "character_surfaces": surfaces,
                "narrative_phase": phase,
            })
        })
        .collect();
    let candidates: Vec<Value> = found
        .characters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "surface": c,
                "role": if i == 0 { "protagonist" } else { "companion" },
                "attribute_hints": [{"key": "outfit", "value": pick(LOOKS, c)}],
            })
        })
        .collect();
    let mut title: Vec<char> = prompt.trim().chars().collect();
    if let Some(first) = title.first_mut() {
        *first = first.to_ascii_uppercase();
    }
    json!({
        "title": title.into_iter().collect::<String>(),
        "pages": pages,
        "character_candidates": candidates,
        "world": {
            "style": "warm storybook illustration",
            "tone": "gentle",
            "recurring_locations": found.locations,
            "recurring_props": [],
        },
    })
}

fn coreference(input: &Value) -> Value {
    let surfaces: Vec<String> = serde_json::from_value(input["surfaces"].clone()).unwrap_or_default();
    let mut clusters: Vec<(String, Vec<String>)> = Vec::new();
    for s in surfaces {
        let key = surface_key(&s);
        match clusters.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(s),
            None => clusters.push((key, vec![s])),
        }
    }
    let clusters: Vec<Value> = clusters
        .into_iter()
        .map(|(_, members)| {
            let canonical = members
                .iter()
                .find(|m| m.chars().next().is_some_and(char::is_uppercase))
                .unwrap_or(&members[0]);
            json!({"canonical": strip_article(canonical), "surfaces": members})
        })
        .collect();
    json!({ "clusters": clusters })
}

fn slug(text: &str) -> String {
    let bare = strip_article(text.trim());
    let mut out = String::new();
    for c in bare.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_owned()
}

/// Case-insensitive split on the first occurrence of `sep`.
fn split_ci<'a>(text: &'a str, sep: &str) -> Option<(&'a str, &'a str)> {
    let at = text.to_lowercase().find(&sep.to_lowercase())?;
    Some((text[..at].trim(), text[at + sep.len()..].trim()))
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| text[prefix.len()..].trim())
}

fn page_number(text: &str) -> Option<(u32, &str)> {
    let rest = strip_prefix_ci(text, "on page ").or_else(|| strip_prefix_ci(text, "page "))?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let n = digits.parse().ok()?;
    let rest = rest[digits.len()..].trim_start_matches([',', ':']).trim();
    Some((n, rest))
}

const POSITION_WORDS: &[&str] = &[
    "on", "in", "at", "near", "under", "behind", "beside", "next", "to", "above", "below", "left",
    "right",
];
const GLOBAL_SUFFIXES: &[&str] = &[
    " throughout the story",
    " on every page",
    " everywhere",
    " in every scene",
];

fn clause_ops(clause: &str, page: Option<u32>) -> Option<Vec<Value>> {
    let clause = clause.trim().trim_end_matches(['.', '!']).trim();
    let clause = strip_prefix_ci(clause, "and ").unwrap_or(clause);
    let (clause, page) = match page_number(clause) {
        Some((n, rest)) => (rest, Some(n)),
        None => (clause, page),
    };
    let mut global = false;
    let mut body = clause;
    for suffix in GLOBAL_SUFFIXES {
        if body.to_lowercase().ends_with(suffix) {
            body = body[..body.len() - suffix.len()].trim();
            global = true;
        }
    }
    let page = if global { None } else { page };

    for verb in ["make the style ", "change the style to ", "set the style to "] {
        if let Some(style) = strip_prefix_ci(body, verb) {
            return Some(vec![json!({"op": "set_world_field", "field": "style", "value": style})]);
        }
    }
    for verb in ["make the tone ", "change the tone to ", "set the tone to "] {
        if let Some(tone) = strip_prefix_ci(body, verb) {
            return Some(vec![json!({"op": "set_world_field", "field": "tone", "value": tone})]);
        }
    }
    for verb in ["remove ", "drop "] {
        if let Some(rest) = strip_prefix_ci(body, verb) {
            if let Some((who, target)) = split_ci(rest, " from ") {
                let (n, _) = page_number(target)?;
                return Some(vec![json!({"op": "remove_character_from_page", "page": n, "character": who})]);
            }
        }
    }
    for verb in ["add ", "put "] {
        if let Some(rest) = strip_prefix_ci(body, verb) {
            for prep in [" to ", " on ", " into "] {
                if let Some((who, target)) = split_ci(rest, prep) {
                    if let Some((n, _)) = page_number(target) {
                        return Some(vec![json!({"op": "add_character_to_page", "page": n, "character": who})]);
                    }
                }
            }
        }
    }
    if let Some(p) = page {
        for verb in ["show ", "the scene should show ", "the scene is "] {
            if let Some(scene) = strip_prefix_ci(body, verb) {
                return Some(vec![json!({"op": "set_scene_description", "page": p, "text": scene})]);
            }
        }
    }
    if let Some((subject, item)) = split_ci(body, " should wear ") {
        return Some(vec![match page {
            Some(p) => json!({
                "op": "set_page_constraint", "page": p,
                "key": format!("{}_outfit", slug(subject)),
                "description": format!("{subject} wearing {item}"),
            }),
            None => json!({"op": "set_character_attribute", "character": subject, "key": "outfit", "value": item}),
        }]);
    }
    if let Some((subject, rest)) = split_ci(body, " always ") {
        return Some(vec![json!({
            "op": "add_identity_invariant", "character": subject, "text": format!("always {rest}"),
        })]);
    }
    if let Some((subject, state)) = split_ci(body, " should be ") {
        let p = page?;
        let first = state.split_whitespace().next().unwrap_or("");
        let suffix = if is_in(first, POSITION_WORDS) { "position" } else { "state" };
        return Some(vec![json!({
            "op": "set_page_constraint", "page": p,
            "key": format!("{}_{suffix}", slug(subject)),
            "description": format!("{subject} {state}"),
        })]);
    }
    for verb in [" has ", " have "] {
        if let Some((subject, rest)) = split_ci(body, verb) {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let (key, value) = match parts.split_last() {
                Some((last, init)) if !init.is_empty() => ((*last).to_owned(), init.join(" ")),
                _ => ("look".to_owned(), rest.to_owned()),
            };
            return Some(vec![match page {
                Some(p) => json!({
                    "op": "set_page_constraint", "page": p,
                    "key": format!("{}_{}", slug(subject), slug(&key)),
                    "description": format!("{subject} with {rest}"),
                }),
                None => json!({"op": "set_character_attribute", "character": subject, "key": key, "value": value}),
            }]);
        }
    }
    None
}

fn edit_request(input: &Value) -> Value {
    let request = input["request"].as_str().unwrap_or_default().trim();
    let (page, body) = match page_number(request) {
        Some((n, rest)) => (Some(n), rest),
        None => (None, request),
    };
    let mut ops = Vec::new();
    let mut unparsed = Vec::new();
    for clause in body.split(", and ").flat_map(|c| c.split("; ")) {
        if clause.trim().is_empty() {
            continue;
        }
        match clause_ops(clause, page) {
            Some(found) => ops.extend(found),
            None => unparsed.push(clause.trim().to_owned()),
        }
    }
    json!({"ops": ops, "unresolved": [], "unparsed": unparsed})
}

#[derive(Deserialize)]
struct CriticCharacter {
    name: String,
    #[serde(default)]
    attributes: Vec<crate::state::Attribute>,
}

fn critic(input: &Value, image_prompt: Option<&str>) -> Value {
    let Some(image_prompt) = image_prompt else {
        return json!({"findings": []});
    };
    let ordinal = input["ordinal"].as_u64().unwrap_or(0);
    let characters: Vec<CriticCharacter> =
        serde_json::from_value(input["characters"].clone()).unwrap_or_default();
    let mut findings = Vec::new();
    for c in &characters {
        for a in &c.attributes {
            if !mentions(image_prompt, &a.value) {
                findings.push(json!({
                    "kind": "attribute_mismatch",
                    "detail": format!("{} should have {} ({}), the image does not show it", c.name, a.value, a.key),
                    "proposed_fix": [{
                        "op": "set_page_constraint",
                        "page": ordinal,
                        "key": format!("{}_{}", slug(&c.name), slug(&a.key)),
                        "description": format!("{} with {}", c.name, a.value),
                    }],
                }));
            }
        }
    }
    json!({ "findings": findings })
}

fn narration(input: &Value) -> Result<String, BackendError> {
    let request: NarrationRequest = serde_json::from_value(input.clone())
        .map_err(|e| BackendError::Protocol(format!("bad narration request: {e}")))?;
    Ok(mock_narration(&request))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_characters_and_locations() {
        let found = extract("a shy boy finds a lost robot in the city");
        assert_eq!(found.characters, vec!["shy boy", "lost robot"]);
        assert_eq!(found.locations, vec!["the city"]);
        let found = extract("Lily and her kite");
        assert_eq!(found.characters, vec!["Lily"]);
        let found = extract("phoenix story");
        assert_eq!(found.characters, vec!["phoenix"]);
    }

    #[test]
    fn page_three_request_yields_two_constraints() {
        let reply = edit_request(&json!({
            "request": "on page 3, Lily should wear the same yellow coat as on page 1, and the TV should be on the left"
        }));
        let ops = reply["ops"].as_array().unwrap();
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[0]["key"], "lily_outfit");
        assert_eq!(ops[0]["page"], 3);
        assert_eq!(ops[1]["key"], "tv_position");
        assert_eq!(ops[1]["description"], "the TV on the left");
    }

    #[test]
    fn global_attribute_request() {
        let reply = edit_request(&json!({"request": "Lily has green eyes throughout the story"}));
        assert_eq!(
            reply["ops"][0],
            json!({"op": "set_character_attribute", "character": "Lily", "key": "eyes", "value": "green"})
        );
    }

    #[test]
    fn coreference_is_exact_modulo_article() {
        let reply = coreference(&json!({"surfaces": ["a robot", "the robot", "Tim"]}));
        let clusters = reply["clusters"].as_array().unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0]["canonical"], "robot");
    }
}
