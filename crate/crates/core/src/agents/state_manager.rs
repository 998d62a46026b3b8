use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agents::structured::{request_structured, Rejection};
use crate::agents::{AgentError, ChatBackend, PlannerOutput, COREFERENCE_SCHEMA, PLANNER_SCHEMA};
use crate::ids::{CharacterId, IdSequence, StoryId};
use crate::state::{
    strip_article, surface_key, Attribute, CharacterEntry, PageState, PromptConfig, StoryState,
    WorldSettings,
};

/// Style used when the planner suggests none.
pub const DEFAULT_STYLE: &str = "storybook illustration";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefCluster {
    pub canonical: String,
    pub surfaces: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct CorefReply {
    clusters: Vec<CorefCluster>,
}

/// Turns a planner outline into a validated story state. Character mentions
/// are clustered by the backend; with a single distinct mention no call is
/// made.
pub fn build_state(
    output: &PlannerOutput,
    backend: &dyn ChatBackend,
    id: StoryId,
) -> Result<StoryState, AgentError> {
    output.check().map_err(|message| malformed(PLANNER_SCHEMA, message))?;

    // Distinct mentions in first-appearance order.
    let mut surfaces: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let all = output
        .character_candidates
        .iter()
        .map(|c| &c.surface)
        .chain(output.pages.iter().flat_map(|p| &p.character_surfaces));
    for s in all {
        if seen.insert(surface_key(s)) {
            surfaces.push(s.trim().to_owned());
        }
    }

    let clusters = if surfaces.len() <= 1 {
        surfaces
            .iter()
            .map(|s| CorefCluster {
                canonical: s.clone(),
                surfaces: vec![s.clone()],
            })
            .collect()
    } else {
        cluster(backend, &surfaces, output)?
    };

    let mut seq = IdSequence::default();
    let mut by_key: BTreeMap<String, CharacterId> = BTreeMap::new();
    let mut characters = Vec::new();
    for c in &clusters {
        let id = seq.mint_character();
        let name = strip_article(c.canonical.trim()).trim().to_owned();
        let mut aliases: Vec<String> = Vec::new();
        let mut alias_keys = BTreeSet::from([surface_key(&name)]);
        for s in &c.surfaces {
            by_key.insert(surface_key(s), id.clone());
            if alias_keys.insert(surface_key(s)) {
                aliases.push(s.trim().to_owned());
            }
        }
        by_key.insert(surface_key(&name), id.clone());
        let members: BTreeSet<String> = c.surfaces.iter().map(|s| surface_key(s)).collect();
        let candidates: Vec<_> = output
            .character_candidates
            .iter()
            .filter(|cand| members.contains(&surface_key(&cand.surface)))
            .collect();
        let role = candidates
            .iter()
            .map(|cand| cand.role.trim())
            .find(|r| !r.is_empty())
            .unwrap_or("character")
            .to_owned();
        let mut attributes: Vec<Attribute> = Vec::new();
        for hint in candidates.iter().flat_map(|cand| &cand.attribute_hints) {
            if !hint.key.trim().is_empty()
                && !hint.value.trim().is_empty()
                && !attributes.iter().any(|a| a.key == hint.key)
            {
                attributes.push(hint.clone());
            }
        }
        characters.push(CharacterEntry {
            id,
            name,
            role,
            attributes,
            reference_assets: vec![],
            aliases,
        });
    }

    let pages = output
        .pages
        .iter()
        .enumerate()
        .map(|(i, planned)| {
            let mut on_page: Vec<CharacterId> = Vec::new();
            for s in &planned.character_surfaces {
                if let Some(id) = by_key.get(&surface_key(s)) {
                    if !on_page.contains(id) {
                        on_page.push(id.clone());
                    }
                }
            }
            PageState {
                id: seq.mint_page(),
                ordinal: i as u32 + 1,
                scene_description: planned.scene_description.trim().to_owned(),
                characters: on_page,
                constraints: vec![],
                narrative_phase: planned.narrative_phase,
                narration_asset: None,
                image_asset: None,
                failure: None,
            }
        })
        .collect();

    let hint = output.world.clone().unwrap_or_default();
    let style = if hint.style.trim().is_empty() {
        DEFAULT_STYLE.to_owned()
    } else {
        hint.style.trim().to_owned()
    };
    let title = output
        .title
        .clone()
        .filter(|t| !t.trim().is_empty())
        .unwrap_or_else(|| output.pages[0].scene_description.clone());
    let state = StoryState {
        id,
        title,
        characters,
        invariants: vec![],
        world: WorldSettings {
            style,
            tone: hint.tone,
            recurring_locations: nonempty(hint.recurring_locations),
            recurring_props: nonempty(hint.recurring_props),
        },
        prompt_config: PromptConfig::default(),
        pages,
        id_sequence: seq,
    };
    let report = state.validate();
    if !report.is_valid() {
        return Err(malformed(
            COREFERENCE_SCHEMA,
            format!("resulting state is invalid: {:?}", report.codes()),
        ));
    }
    Ok(state)
}

fn nonempty(items: Vec<String>) -> Vec<String> {
    items.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

fn malformed(schema: &str, message: String) -> AgentError {
    AgentError::MalformedAgentOutput {
        schema: schema.to_owned(),
        attempts: 0,
        message,
        raw: String::new(),
    }
}

fn cluster(
    backend: &dyn ChatBackend,
    surfaces: &[String],
    output: &PlannerOutput,
) -> Result<Vec<CorefCluster>, AgentError> {
    let candidates: Vec<_> = output
        .character_candidates
        .iter()
        .map(|c| serde_json::json!({"surface": c.surface, "role": c.role}))
        .collect();
    let user_text = serde_json::json!({
        "surfaces": surfaces,
        "candidates": candidates,
    })
    .to_string();
    let expected: BTreeSet<String> = surfaces.iter().map(|s| surface_key(s)).collect();
    request_structured(backend, COREFERENCE_SCHEMA, user_text, vec![], |reply: CorefReply| {
        let mut assigned: BTreeMap<String, usize> = BTreeMap::new();
        for (i, c) in reply.clusters.iter().enumerate() {
            if c.canonical.trim().is_empty() || strip_article(c.canonical.trim()).is_empty() {
                return Err(Rejection::Retry(format!("cluster {} has an empty canonical name", i + 1)));
            }
            if c.surfaces.is_empty() {
                return Err(Rejection::Retry(format!("cluster {} has no surfaces", i + 1)));
            }
            for s in &c.surfaces {
                let key = surface_key(s);
                if !expected.contains(&key) {
                    return Err(Rejection::Retry(format!("unknown surface {s:?}")));
                }
                if let Some(prev) = assigned.insert(key, i) {
                    if prev != i {
                        return Err(Rejection::Retry(format!("surface {s:?} is in two clusters")));
                    }
                }
            }
        }
        if let Some(missing) = expected.iter().find(|k| !assigned.contains_key(*k)) {
            return Err(Rejection::Retry(format!("surface {missing:?} is not in any cluster")));
        }
        // A canonical name matching another cluster's mention would make
        // aliases ambiguous.
        for (i, c) in reply.clusters.iter().enumerate() {
            if let Some(&owner) = assigned.get(&surface_key(&c.canonical)) {
                if owner != i {
                    return Err(Rejection::Retry(format!(
                        "canonical {:?} is a mention of another cluster",
                        c.canonical
                    )));
                }
            }
        }
        Ok(reply.clusters)
    })
}
