use serde::{Deserialize, Serialize};

use crate::agents::structured::{request_structured, Rejection};
use crate::agents::{AgentError, ChatBackend, PLANNER_SCHEMA};
use crate::state::{Attribute, NarrativePhase, PhaseSplit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedPage {
    pub scene_description: String,
    #[serde(default)]
    pub character_surfaces: Vec<String>,
    pub narrative_phase: NarrativePhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterCandidate {
    pub surface: String,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub attribute_hints: Vec<Attribute>,
}

/// Optional world settings suggested by the planner.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldHint {
    #[serde(default)]
    pub style: String,
    #[serde(default)]
    pub tone: String,
    #[serde(default)]
    pub recurring_locations: Vec<String>,
    #[serde(default)]
    pub recurring_props: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOutput {
    #[serde(default)]
    pub title: Option<String>,
    pub pages: Vec<PlannedPage>,
    #[serde(default)]
    pub character_candidates: Vec<CharacterCandidate>,
    #[serde(default)]
    pub world: Option<WorldHint>,
}

impl PlannerOutput {
    /// Structural checks shared by [`plan`] and `build_state`.
    pub fn check(&self) -> Result<(), String> {
        if self.pages.is_empty() {
            return Err("pages must not be empty".into());
        }
        for (i, page) in self.pages.iter().enumerate() {
            if page.scene_description.trim().is_empty() {
                return Err(format!("page {} has an empty scene_description", i + 1));
            }
            if page.character_surfaces.iter().any(|s| s.trim().is_empty()) {
                return Err(format!("page {} has an empty character surface", i + 1));
            }
        }
        if let Some(i) = self
            .pages
            .windows(2)
            .position(|w| w[1].narrative_phase < w[0].narrative_phase)
        {
            return Err(format!(
                "narrative phases must not go backwards (page {} after page {})",
                i + 2,
                i + 1
            ));
        }
        if self.character_candidates.iter().any(|c| c.surface.trim().is_empty()) {
            return Err("character candidate with empty surface".into());
        }
        Ok(())
    }
}

/// Asks the backend for a page outline with exactly `n_pages` pages. The
/// requested phases follow `split`.
pub fn plan(
    backend: &dyn ChatBackend,
    user_prompt: &str,
    n_pages: usize,
    split: &PhaseSplit,
) -> Result<PlannerOutput, AgentError> {
    if n_pages == 0 {
        return Err(AgentError::InvalidInput("n_pages must be at least 1".into()));
    }
    if user_prompt.trim().is_empty() {
        return Err(AgentError::InvalidInput("prompt is empty".into()));
    }
    let phases = split.phases(n_pages);
    let user_text = serde_json::json!({
        "prompt": user_prompt,
        "n_pages": n_pages,
        "phases": phases,
    })
    .to_string();
    request_structured(backend, PLANNER_SCHEMA, user_text, vec![], |out: PlannerOutput| {
        if out.pages.len() != n_pages {
            return Err(Rejection::Retry(format!(
                "expected exactly {n_pages} pages, got {}",
                out.pages.len()
            )));
        }
        out.check().map_err(Rejection::Retry)?;
        Ok(out)
    })
}
