use serde::{Deserialize, Serialize};

use crate::agents::structured::{request_structured, Rejection};
use crate::agents::{AgentError, ChatBackend, EDIT_REQUEST_SCHEMA};
use crate::edit::{apply_batch, EditBatch, EditOp, WorldField, WorldValue};
use crate::ids::{CharacterId, PageId};
use crate::state::{IdentityInvariant, NarrativePhase, StateError, StoryState};

fn yes() -> bool {
    true
}

/// An op as an agent writes it: characters by name or alias, pages by
/// ordinal. [`ground_ops`] resolves it into an [`EditOp`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawOp {
    SetCharacterAttribute {
        character: String,
        key: String,
        value: String,
    },
    AddIdentityInvariant {
        character: String,
        text: String,
        #[serde(default = "yes")]
        active: bool,
    },
    RemoveIdentityInvariant {
        character: String,
        text: String,
    },
    SetWorldField {
        field: String,
        value: WorldValue,
    },
    SetSceneDescription {
        page: u32,
        text: String,
    },
    SetPageConstraint {
        page: u32,
        key: String,
        description: String,
    },
    RemovePageConstraint {
        page: u32,
        key: String,
    },
    AddCharacterToPage {
        page: u32,
        character: String,
    },
    RemoveCharacterFromPage {
        page: u32,
        character: String,
    },
    SetNarrativePhase {
        page: u32,
        phase: NarrativePhase,
    },
}

impl RawOp {
    /// Page ordinal this op is scoped to, if any.
    pub fn page(&self) -> Option<u32> {
        match self {
            RawOp::SetSceneDescription { page, .. }
            | RawOp::SetPageConstraint { page, .. }
            | RawOp::RemovePageConstraint { page, .. }
            | RawOp::AddCharacterToPage { page, .. }
            | RawOp::RemoveCharacterFromPage { page, .. }
            | RawOp::SetNarrativePhase { page, .. } => Some(*page),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct EditReply {
    #[serde(default)]
    ops: Vec<RawOp>,
    #[serde(default)]
    unresolved: Vec<String>,
}

fn character(state: &StoryState, surface: &str) -> Result<CharacterId, AgentError> {
    match state.resolve_alias(surface) {
        Ok(Some(id)) => Ok(id),
        Ok(None) => Err(AgentError::UngroundedReference {
            surface: surface.to_owned(),
        }),
        Err(StateError::AmbiguousAlias { candidates, .. }) => Err(AgentError::AmbiguousReference {
            surface: surface.to_owned(),
            candidates: candidates.iter().map(|c| c.to_string()).collect(),
        }),
        Err(other) => Err(AgentError::InvalidInput(other.to_string())),
    }
}

fn page(state: &StoryState, ordinal: u32) -> Result<PageId, AgentError> {
    state
        .page_by_ordinal(ordinal)
        .map(|p| p.id.clone())
        .ok_or_else(|| AgentError::UngroundedReference {
            surface: format!("page {ordinal}"),
        })
}

/// Resolves surfaces and ordinals against `state`.
pub fn ground_ops(state: &StoryState, raw: &[RawOp]) -> Result<Vec<EditOp>, AgentError> {
    raw.iter()
        .map(|op| {
            Ok(match op {
                RawOp::SetCharacterAttribute {
                    character: c,
                    key,
                    value,
                } => EditOp::SetCharacterAttribute {
                    character: character(state, c)?,
                    key: key.clone(),
                    value: value.clone(),
                },
                RawOp::AddIdentityInvariant {
                    character: c,
                    text,
                    active,
                } => EditOp::AddIdentityInvariant {
                    invariant: IdentityInvariant {
                        character: character(state, c)?,
                        constraint_text: text.clone(),
                        active: *active,
                    },
                },
                RawOp::RemoveIdentityInvariant { character: c, text } => {
                    EditOp::RemoveIdentityInvariant {
                        character: character(state, c)?,
                        constraint_text: text.clone(),
                    }
                }
                RawOp::SetWorldField { field, value } => EditOp::SetWorldField {
                    field: WorldField::parse(field).ok_or_else(|| {
                        AgentError::InvalidInput(format!("unknown world field {field:?}"))
                    })?,
                    value: value.clone(),
                },
                RawOp::SetSceneDescription { page: p, text } => EditOp::SetSceneDescription {
                    page: page(state, *p)?,
                    text: text.clone(),
                },
                RawOp::SetPageConstraint {
                    page: p,
                    key,
                    description,
                } => EditOp::SetPageConstraint {
                    page: page(state, *p)?,
                    key: key.clone(),
                    description: description.clone(),
                },
                RawOp::RemovePageConstraint { page: p, key } => EditOp::RemovePageConstraint {
                    page: page(state, *p)?,
                    key: key.clone(),
                },
                RawOp::AddCharacterToPage { page: p, character: c } => {
                    EditOp::AddCharacterToPage {
                        page: page(state, *p)?,
                        character: character(state, c)?,
                    }
                }
                RawOp::RemoveCharacterFromPage { page: p, character: c } => {
                    EditOp::RemoveCharacterFromPage {
                        page: page(state, *p)?,
                        character: character(state, c)?,
                    }
                }
                RawOp::SetNarrativePhase { page: p, phase } => EditOp::SetNarrativePhase {
                    page: page(state, *p)?,
                    phase: *phase,
                },
            })
        })
        .collect()
}

/// The story as an agent sees it: names instead of ids, ordinals instead of
/// page ids.
pub(crate) fn story_context(state: &StoryState) -> serde_json::Value {
    let name_of = |id: &CharacterId| {
        state
            .character(id)
            .map_or_else(|| id.to_string(), |c| c.name.clone())
    };
    let characters: Vec<_> = state
        .characters
        .iter()
        .map(|c| {
            serde_json::json!({
                "name": c.name,
                "aliases": c.aliases,
                "attributes": c.attributes,
                "invariants": state.active_invariants(&c.id),
            })
        })
        .collect();
    let pages: Vec<_> = state
        .pages_in_order()
        .into_iter()
        .map(|p| {
            serde_json::json!({
                "ordinal": p.ordinal,
                "scene_description": p.scene_description,
                "characters": p.characters.iter().map(name_of).collect::<Vec<_>>(),
                "constraints": p.constraints.iter().map(|c| serde_json::json!({"key": c.key, "description": c.description})).collect::<Vec<_>>(),
                "narrative_phase": p.narrative_phase,
            })
        })
        .collect();
    serde_json::json!({
        "characters": characters,
        "pages": pages,
        "world": state.world,
    })
}

/// Maps a free-text request to a grounded, dry-run-checked batch.
pub fn parse_edit_request(
    backend: &dyn ChatBackend,
    state: &StoryState,
    request: &str,
) -> Result<EditBatch, AgentError> {
    if request.trim().is_empty() {
        return Err(AgentError::InvalidInput("edit request is empty".into()));
    }
    let mut context = story_context(state);
    context["request"] = serde_json::Value::String(request.to_owned());
    request_structured(
        backend,
        EDIT_REQUEST_SCHEMA,
        context.to_string(),
        vec![],
        |reply: EditReply| {
            if let Some(surface) = reply.unresolved.first() {
                return Err(Rejection::Fatal(AgentError::UngroundedReference {
                    surface: surface.clone(),
                }));
            }
            if reply.ops.is_empty() {
                return Err(Rejection::Retry("no ops produced for the request".into()));
            }
            let ops = ground_ops(state, &reply.ops).map_err(|e| match e {
                AgentError::InvalidInput(m) => Rejection::Retry(m),
                other => Rejection::Fatal(other),
            })?;
            let batch = EditBatch::user(ops).with_note(request);
            apply_batch(state, &batch)
                .map_err(|e| Rejection::Retry(format!("edit engine rejects the ops: {e}")))?;
            Ok(batch)
        },
    )
}
