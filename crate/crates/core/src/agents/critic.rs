use serde::{Deserialize, Serialize};

use crate::agents::edit_parser::{ground_ops, RawOp};
use crate::agents::structured::{request_structured, Rejection};
use crate::agents::{AgentError, Attachment, ChatBackend, CRITIC_SCHEMA};
use crate::edit::{apply_batch, EditBatch, EditOp, Origin};
use crate::ids::PageId;
use crate::prompt::compile_page;
use crate::state::{AssetRef, StoryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    AttributeMismatch,
    MissingElement,
    MislocatedElement,
    LayoutViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticFinding {
    /// Assigned by the engine when the finding is surfaced.
    #[serde(default)]
    pub id: String,
    pub kind: FindingKind,
    pub page: PageId,
    pub detail: String,
    /// Critic-origin batch touching only this page or the character sheet.
    pub proposed_fix: EditBatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticReport {
    pub page: PageId,
    pub findings: Vec<CriticFinding>,
    pub pass: bool,
    /// The backend could not see the image and judged from text alone.
    #[serde(default)]
    pub degraded: bool,
}

/// The generated assets of the page under review.
#[derive(Debug, Clone)]
pub struct PageAssets {
    pub narration: AssetRef,
    pub narration_text: String,
    pub image: AssetRef,
    pub image_bytes: Vec<u8>,
    pub image_media_type: String,
}

#[derive(Debug, Deserialize)]
struct RawFinding {
    kind: FindingKind,
    detail: String,
    #[serde(default)]
    proposed_fix: Vec<RawOp>,
}

#[derive(Debug, Deserialize)]
struct CriticReply {
    #[serde(default)]
    findings: Vec<RawFinding>,
}

fn sheet_op(op: &RawOp) -> bool {
    matches!(
        op,
        RawOp::SetCharacterAttribute { .. }
            | RawOp::AddIdentityInvariant { .. }
            | RawOp::RemoveIdentityInvariant { .. }
    )
}

pub fn critique(
    backend: &dyn ChatBackend,
    state: &StoryState,
    page: &PageId,
    assets: &PageAssets,
) -> Result<CriticReport, AgentError> {
    let page_state = state
        .page(page)
        .ok_or_else(|| AgentError::InvalidInput(format!("unknown page {page}")))?;
    let prompt = compile_page(state, page).map_err(|e| AgentError::InvalidInput(e.to_string()))?;
    let ordinal = page_state.ordinal;
    let degraded = !backend.supports_images();

    let characters: Vec<_> = state
        .characters
        .iter()
        .filter(|c| page_state.characters.contains(&c.id))
        .map(|c| {
            serde_json::json!({
                "name": c.name,
                "attributes": c.attributes,
                "invariants": state.active_invariants(&c.id),
            })
        })
        .collect();
    let mut context = serde_json::json!({
        "ordinal": ordinal,
        "scene_description": page_state.scene_description,
        "characters": characters,
        "constraints": page_state.constraints.iter().map(|c| serde_json::json!({"key": c.key, "description": c.description})).collect::<Vec<_>>(),
        "identity_prompt": prompt.scoped_identity,
        "page_prompt": prompt.text,
        "narration": assets.narration_text,
    });
    let attachments = if degraded {
        context["image_description"] = serde_json::Value::String(format!(
            "image not attached (content hash {}); it was generated from the prompts above",
            assets.image.content_hash
        ));
        vec![]
    } else {
        vec![Attachment {
            asset: assets.image.clone(),
            media_type: assets.image_media_type.clone(),
            bytes: assets.image_bytes.clone(),
        }]
    };

    request_structured(
        backend,
        CRITIC_SCHEMA,
        context.to_string(),
        attachments,
        |reply: CriticReply| {
            let mut findings = Vec::new();
            for (i, raw) in reply.findings.into_iter().enumerate() {
                let n = i + 1;
                if raw.proposed_fix.is_empty() {
                    return Err(Rejection::Retry(format!("finding {n} has an empty proposed_fix")));
                }
                for op in &raw.proposed_fix {
                    if op.page().is_some_and(|p| p != ordinal) || (op.page().is_none() && !sheet_op(op)) {
                        return Err(Rejection::Retry(format!(
                            "finding {n} touches something other than page {ordinal} or the character sheet"
                        )));
                    }
                }
                let ops: Vec<EditOp> = ground_ops(state, &raw.proposed_fix)
                    .map_err(|e| Rejection::Retry(format!("finding {n}: {e}")))?;
                let batch = EditBatch::new(Origin::Critic, ops).with_note(raw.detail.clone());
                apply_batch(state, &batch)
                    .map_err(|e| Rejection::Retry(format!("finding {n} fix is not applicable: {e}")))?;
                findings.push(CriticFinding {
                    id: String::new(),
                    kind: raw.kind,
                    page: page.clone(),
                    detail: raw.detail,
                    proposed_fix: batch,
                });
            }
            Ok(CriticReport {
                page: page.clone(),
                pass: findings.is_empty(),
                findings,
                degraded,
            })
        },
    )
}
