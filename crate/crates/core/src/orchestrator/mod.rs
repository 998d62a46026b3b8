//! Story lifecycle: creation, edit cycles with selective regeneration, the
//! critic loop, page retries and revert.
//!
//! The engine is synchronous. Narration for distinct pages is generated on
//! scoped threads; images for all pages of a cycle go to the image backend in
//! one request. State changes and revision commits happen on the calling
//! thread only, so one [`Story`] is never mutated concurrently.

mod session;
mod store;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    build_state, critique, parse_edit_request, plan, AgentError, BackendError, ChatBackend,
    CriticFinding, MockChatBackend, PageAssets,
};
use crate::canonical::canonical_json_line;
use crate::edit::{
    apply_batch, compute_dirty_set, diff_states, DirtySet, EditBatch, EditError, History, Origin,
    RevisionDraft, RevisionKind, StateDiff,
};
use crate::generation::{
    ImageBackend, ImageRequest, MockImageBackend, MockTextBackend, NarrationRequest, TextBackend,
    MOCK_IMAGE_MEDIA_TYPE,
};
use crate::ids::{PageId, RevisionId, StoryId};
use crate::persistence::PersistenceError;
use crate::prompt::{compile, PromptError};
use crate::state::{AssetKind, AssetRef, PageFailure, PhaseSplit, StoryState};

pub use session::{ProjectSession, SessionFile, SESSION_FILE};
pub use store::{AssetStore, MemoryAssets, ReadOnlyAssets};

/// Narration requests in flight at once within a cycle.
const TEXT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error("invalid engine mode: {0}")]
    InvalidMode(String),
    #[error("unknown critic finding {0}")]
    UnknownFinding(String),
    #[error("unknown page {0}")]
    UnknownPage(PageId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl EngineError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Agent(AgentError::Backend(_)) => "backend_error",
            EngineError::Agent(AgentError::MalformedAgentOutput { .. }) => "malformed_agent_output",
            EngineError::Agent(AgentError::UngroundedReference { .. }) => "ungrounded_reference",
            EngineError::Agent(AgentError::AmbiguousReference { .. }) => "ambiguous_reference",
            EngineError::Agent(AgentError::InvalidInput(_)) => "validation_error",
            EngineError::Edit(EditError::UnknownRevision(_)) => "unknown_revision",
            EngineError::Edit(_) => "edit_rejected",
            EngineError::Prompt(PromptError::UnknownPage(_)) => "not_found",
            EngineError::Prompt(_) => "validation_error",
            EngineError::Persistence(PersistenceError::ProjectLocked { .. }) => "project_locked",
            EngineError::Persistence(PersistenceError::MissingAsset(_)) => "not_found",
            EngineError::Persistence(PersistenceError::Load { .. }) => "load_error",
            EngineError::Persistence(_) => "internal_error",
            EngineError::InvalidMode(_) | EngineError::InvalidRequest(_) => "validation_error",
            EngineError::UnknownFinding(_) | EngineError::UnknownPage(_) => "not_found",
        }
    }
}

fn yes() -> bool {
    true
}

fn default_iters() -> u32 {
    3
}

/// Ablation switches. The default is the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineMode {
    /// Off: edits are appended to every page prompt instead of changing the state.
    #[serde(default = "yes")]
    pub explicit_state: bool,
    /// Off: every edit regenerates every page.
    #[serde(default = "yes")]
    pub page_level_regen: bool,
    #[serde(default = "yes")]
    pub critic_enabled: bool,
    #[serde(default = "default_iters")]
    pub critic_max_iters: u32,
    /// Apply critic fixes without asking. Off: findings are surfaced.
    #[serde(default)]
    pub auto_accept_critic: bool,
}

impl Default for EngineMode {
    fn default() -> Self {
        Self::full()
    }
}

impl EngineMode {
    pub fn full() -> Self {
        Self {
            explicit_state: true,
            page_level_regen: true,
            critic_enabled: true,
            critic_max_iters: default_iters(),
            auto_accept_critic: false,
        }
    }

    /// Parses `full`, `no-state`, `no-page-regen` or `no-critic`.
    pub fn named(name: &str) -> Option<Self> {
        Self::full().with_ablation(name)
    }

    /// Applies the switches of a named mode, keeping the critic settings.
    pub fn with_ablation(self, name: &str) -> Option<Self> {
        let (explicit_state, page_level_regen, critic_enabled) =
            match name.trim().to_ascii_lowercase().replace('_', "-").as_str() {
                "full" => (true, true, true),
                "no-state" => (false, true, true),
                "no-page-regen" => (true, false, true),
                "no-critic" => (true, true, false),
                _ => return None,
            };
        Some(Self {
            explicit_state,
            page_level_regen,
            critic_enabled,
            ..self
        })
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.critic_enabled && self.critic_max_iters == 0 {
            return Err(EngineError::InvalidMode(
                "critic_max_iters must be at least 1 when the critic is enabled".into(),
            ));
        }
        Ok(())
    }
}

/// The three backends a story is generated with.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub text: Arc<dyn TextBackend>,
    pub image: Arc<dyn ImageBackend>,
}

impl Backends {
    pub fn mock() -> Self {
        Self {
            chat: Arc::new(MockChatBackend::new()),
            text: Arc::new(MockTextBackend::new()),
            image: Arc::new(MockImageBackend::new()),
        }
    }
}

/// A story's head state, history and pending critic findings.
#[derive(Debug, Clone, PartialEq)]
pub struct Story {
    pub state: StoryState,
    pub history: History,
    pub findings: Vec<CriticFinding>,
    pub next_finding: u64,
}

impl Story {
    pub fn new(state: StoryState, history: History) -> Self {
        Self {
            state,
            history,
            findings: Vec::new(),
            next_finding: 1,
        }
    }

    pub fn head(&self) -> RevisionId {
        self.history
            .head()
            .map_or_else(|| RevisionId::from_index(0), |r| r.id.clone())
    }

    /// Prompt-only edits in effect at the head revision.
    pub fn prompt_appendix(&self) -> &[String] {
        self.history
            .head()
            .map_or(&[], |r| r.prompt_appendix.as_slice())
    }

    pub fn finding(&self, id: &str) -> Option<&CriticFinding> {
        self.findings.iter().find(|f| f.id == id)
    }
}

pub enum EditInput {
    Text(String),
    Batch(EditBatch),
}

/// What one cycle did. The regenerated sets list exactly the pages whose
/// assets were replaced, across the edit and any critic fixes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCycleResult {
    pub revision: RevisionId,
    pub regenerated_image_pages: BTreeSet<PageId>,
    pub regenerated_text_pages: BTreeSet<PageId>,
    pub critic_iterations_used: u32,
    pub findings_remaining: Vec<CriticFinding>,
    /// Pages regenerated by critic fixes outside the cycle's own pages.
    pub critic_cascade: BTreeSet<PageId>,
    pub failed_pages: BTreeSet<PageId>,
    pub warnings: Vec<String>,
}

impl EditCycleResult {
    fn absorb(&mut self, outcome: &Generated) {
        self.regenerated_image_pages.extend(outcome.images.iter().cloned());
        self.regenerated_text_pages.extend(outcome.texts.iter().cloned());
        self.failed_pages.extend(outcome.failed.iter().cloned());
        self.failed_pages.retain(|p| !outcome.images.contains(p) || outcome.failed.contains(p));
        self.warnings.extend(outcome.warnings.iter().cloned());
    }
}

#[derive(Debug, Default)]
struct Generated {
    images: BTreeSet<PageId>,
    texts: BTreeSet<PageId>,
    failed: BTreeSet<PageId>,
    warnings: Vec<String>,
}

/// Seed for the cycle that will produce revision `revision_index`.
pub fn cycle_seed(seed: u64, revision_index: usize) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update((revision_index as u64).to_le_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Guesses an image media type from its leading bytes.
pub fn sniff_media_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"P6\n") {
        MOCK_IMAGE_MEDIA_TYPE
    } else if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8]) {
        "image/jpeg"
    } else if bytes.starts_with(b"RIFF") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

pub struct Engine {
    pub backends: Backends,
    pub split: PhaseSplit,
}

impl Engine {
    pub fn new(backends: Backends) -> Self {
        Self {
            backends,
            split: PhaseSplit::default(),
        }
    }

    pub fn mock() -> Self {
        Self::new(Backends::mock())
    }

    /// Plans, builds the state and generates every page. Pages whose
    /// generation fails are marked and can be retried individually.
    pub fn create_story(
        &self,
        store: &dyn AssetStore,
        id: StoryId,
        prompt: &str,
        n_pages: usize,
        seed: u64,
    ) -> Result<(Story, EditCycleResult), EngineError> {
        let start = Instant::now();
        let chat = self.backends.chat.as_ref();
        let outline = plan(chat, prompt, n_pages, &self.split)?;
        let mut state = build_state(&outline, chat, id)?;
        let all = state.page_ids();
        let revision = RevisionId::from_index(0);
        let generated = self.generate(&mut state, store, &all, &all, cycle_seed(seed, 0), &revision, &[])?;
        let mut history = History::new();
        let mut draft = RevisionDraft::new(state.clone(), Origin::Planner, RevisionKind::Create);
        draft.dirty = DirtySet::everything(&state);
        draft.note = prompt.to_owned();
        draft.regenerated_image_pages = generated.images.clone();
        draft.regenerated_text_pages = generated.texts.clone();
        draft.elapsed_ms = elapsed_ms(start);
        history.commit(draft);
        let story = Story::new(state, history);
        let mut result = EditCycleResult {
            revision: story.head(),
            ..EditCycleResult::default()
        };
        result.absorb(&generated);
        Ok((story, result))
    }

    /// Starts a story from an existing state without generating anything.
    pub fn adopt(state: StoryState, note: &str) -> Story {
        let mut history = History::new();
        let mut draft = RevisionDraft::new(state.clone(), Origin::User, RevisionKind::Import);
        draft.note = note.to_owned();
        history.commit(draft);
        Story::new(state, history)
    }

    pub fn run_edit_cycle(
        &self,
        story: &mut Story,
        store: &dyn AssetStore,
        input: EditInput,
        mode: &EngineMode,
        seed: u64,
    ) -> Result<EditCycleResult, EngineError> {
        mode.validate()?;
        let start = Instant::now();
        let head = story.state.clone();
        let mut appendix = story.prompt_appendix().to_vec();

        let (mut next, diff, dirty, kind, origin, note) = if mode.explicit_state {
            let batch = match input {
                EditInput::Text(text) => {
                    parse_edit_request(self.backends.chat.as_ref(), &head, &text)?
                }
                EditInput::Batch(batch) => batch,
            };
            let (next, diff) = apply_batch(&head, &batch)?;
            let dirty = compute_dirty_set(&head, &next, &diff);
            (next, diff, dirty, RevisionKind::Edit, batch.origin, batch.note)
        } else {
            let text = match input {
                EditInput::Text(text) => text,
                EditInput::Batch(batch) if !batch.note.trim().is_empty() => batch.note,
                EditInput::Batch(batch) => canonical_json_line(&batch.ops)
                    .map_err(|e| EngineError::InvalidRequest(e.to_string()))?,
            };
            if text.trim().is_empty() {
                return Err(EngineError::InvalidRequest("edit request is empty".into()));
            }
            appendix.push(text.trim().to_owned());
            let dirty = DirtySet::everything(&head);
            (head.clone(), StateDiff::default(), dirty, RevisionKind::PromptOnlyEdit, Origin::User, text)
        };

        let (image_pages, text_pages) = if mode.page_level_regen {
            (dirty.image_pages.clone(), dirty.text_pages.clone())
        } else {
            (next.page_ids(), next.page_ids())
        };
        let revision = story.history.next_id();
        let seed = cycle_seed(seed, story.history.len());
        let generated = self.generate(&mut next, store, &image_pages, &text_pages, seed, &revision, &appendix)?;

        let mut draft = RevisionDraft::new(next.clone(), origin, kind);
        draft.diff = diff;
        draft.dirty = dirty;
        draft.note = note;
        draft.regenerated_image_pages = generated.images.clone();
        draft.regenerated_text_pages = generated.texts.clone();
        draft.prompt_appendix = appendix;
        draft.elapsed_ms = elapsed_ms(start);
        story.history.commit(draft);
        story.state = next;
        story.findings.retain(|f| !generated.images.contains(&f.page));

        let mut result = EditCycleResult::default();
        result.absorb(&generated);
        if mode.critic_enabled && mode.explicit_state && !generated.images.is_empty() {
            self.critic_loop(story, store, &generated.images, mode, seed, &mut result)?;
        }
        result.revision = story.head();
        Ok(result)
    }

    /// Critiques `pages`, applying fixes when the mode allows, until every
    /// page passes or `critic_max_iters` critique rounds have run. Critic
    /// failures become warnings.
    pub fn critic_loop(
        &self,
        story: &mut Story,
        store: &dyn AssetStore,
        pages: &BTreeSet<PageId>,
        mode: &EngineMode,
        seed: u64,
        result: &mut EditCycleResult,
    ) -> Result<(), EngineError> {
        let chat = self.backends.chat.as_ref();
        let mut to_check = pages.clone();
        for iteration in 1..=mode.critic_max_iters.max(1) {
            result.critic_iterations_used = iteration;
            let mut findings = Vec::new();
            for page in &to_check {
                let assets = match page_assets(&story.state, store, page) {
                    Ok(Some(assets)) => assets,
                    Ok(None) => continue,
                    Err(e) => {
                        result.warnings.push(format!("critic skipped on {page}: {e}"));
                        continue;
                    }
                };
                match critique(chat, &story.state, page, &assets) {
                    Ok(report) => {
                        if report.degraded {
                            result
                                .warnings
                                .push(format!("critic on {page} judged without seeing the image"));
                        }
                        findings.extend(report.findings);
                    }
                    Err(e) => result.warnings.push(format!("critic skipped on {page}: {e}")),
                }
            }
            if findings.is_empty() {
                result.findings_remaining.clear();
                return Ok(());
            }
            if !mode.auto_accept_critic || iteration == mode.critic_max_iters {
                result.findings_remaining = surface(story, &to_check, findings);
                return Ok(());
            }

            let head = story.state.clone();
            let mut next = head.clone();
            let mut notes = Vec::new();
            for finding in &findings {
                match apply_batch(&next, &finding.proposed_fix) {
                    Ok((state, _)) => {
                        next = state;
                        notes.push(finding.detail.clone());
                    }
                    Err(e) => result
                        .warnings
                        .push(format!("critic fix on {} not applied: {e}", finding.page)),
                }
            }
            let diff = diff_states(&head, &next);
            if diff.is_empty() {
                // Nothing to regenerate; look again at the same pages.
                continue;
            }
            let dirty = compute_dirty_set(&head, &next, &diff);
            let (image_pages, text_pages) = if mode.page_level_regen {
                (dirty.image_pages.clone(), dirty.text_pages.clone())
            } else {
                (next.page_ids(), next.page_ids())
            };
            result
                .critic_cascade
                .extend(image_pages.iter().filter(|p| !pages.contains(*p)).cloned());
            let start = Instant::now();
            let revision = story.history.next_id();
            let fix_seed = cycle_seed(seed, story.history.len());
            let appendix = story.prompt_appendix().to_vec();
            let generated =
                self.generate(&mut next, store, &image_pages, &text_pages, fix_seed, &revision, &appendix)?;
            let mut draft = RevisionDraft::new(next.clone(), Origin::Critic, RevisionKind::CriticFix);
            draft.diff = diff;
            draft.dirty = dirty;
            draft.note = notes.join("; ");
            draft.regenerated_image_pages = generated.images.clone();
            draft.regenerated_text_pages = generated.texts.clone();
            draft.prompt_appendix = appendix;
            draft.elapsed_ms = elapsed_ms(start);
            story.history.commit(draft);
            story.state = next;
            result.absorb(&generated);
            if !generated.images.is_empty() {
                to_check = generated.images.clone();
            }
        }
        Ok(())
    }

    /// Applies one surfaced critic finding as a critic-origin revision.
    pub fn accept_finding(
        &self,
        story: &mut Story,
        store: &dyn AssetStore,
        finding_id: &str,
        mode: &EngineMode,
        seed: u64,
    ) -> Result<EditCycleResult, EngineError> {
        let finding = story
            .finding(finding_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownFinding(finding_id.to_owned()))?;
        let start = Instant::now();
        let head = story.state.clone();
        let (mut next, diff) = apply_batch(&head, &finding.proposed_fix)?;
        let dirty = compute_dirty_set(&head, &next, &diff);
        let (image_pages, text_pages) = if mode.page_level_regen {
            (dirty.image_pages.clone(), dirty.text_pages.clone())
        } else {
            (next.page_ids(), next.page_ids())
        };
        let revision = story.history.next_id();
        let appendix = story.prompt_appendix().to_vec();
        let generated = self.generate(
            &mut next,
            store,
            &image_pages,
            &text_pages,
            cycle_seed(seed, story.history.len()),
            &revision,
            &appendix,
        )?;
        let mut draft = RevisionDraft::new(next.clone(), Origin::Critic, RevisionKind::CriticFix);
        draft.diff = diff;
        draft.dirty = dirty;
        draft.note = format!("accepted {}: {}", finding.id, finding.detail);
        draft.regenerated_image_pages = generated.images.clone();
        draft.regenerated_text_pages = generated.texts.clone();
        draft.prompt_appendix = appendix;
        draft.elapsed_ms = elapsed_ms(start);
        story.history.commit(draft);
        story.state = next;
        story.findings.retain(|f| f.id != finding_id && !generated.images.contains(&f.page));
        let mut result = EditCycleResult::default();
        result.absorb(&generated);
        result
            .critic_cascade
            .extend(generated.images.iter().filter(|p| **p != finding.page).cloned());
        result.findings_remaining = story.findings.clone();
        result.revision = story.head();
        Ok(result)
    }

    /// Regenerates one page's image and narration, typically after a failure.
    pub fn retry_page(
        &self,
        story: &mut Story,
        store: &dyn AssetStore,
        page: &PageId,
        seed: u64,
    ) -> Result<EditCycleResult, EngineError> {
        if story.state.page(page).is_none() {
            return Err(EngineError::UnknownPage(page.clone()));
        }
        let start = Instant::now();
        let mut next = story.state.clone();
        let only = BTreeSet::from([page.clone()]);
        let revision = story.history.next_id();
        let appendix = story.prompt_appendix().to_vec();
        let generated = self.generate(
            &mut next,
            store,
            &only,
            &only,
            cycle_seed(seed, story.history.len()),
            &revision,
            &appendix,
        )?;
        let mut draft = RevisionDraft::new(next.clone(), Origin::User, RevisionKind::Retry);
        draft.diff = diff_states(&story.state, &next);
        draft.note = format!("retry {page}");
        draft.regenerated_image_pages = generated.images.clone();
        draft.regenerated_text_pages = generated.texts.clone();
        draft.prompt_appendix = appendix;
        draft.elapsed_ms = elapsed_ms(start);
        story.history.commit(draft);
        story.state = next;
        story.findings.retain(|f| !generated.images.contains(&f.page));
        let mut result = EditCycleResult::default();
        result.absorb(&generated);
        result.revision = story.head();
        Ok(result)
    }

    /// Restores an earlier revision, asset pointers included. Nothing is
    /// regenerated; pending findings are dropped.
    pub fn revert(story: &mut Story, to: &RevisionId) -> Result<RevisionId, EngineError> {
        story.state = story.history.revert(to, Origin::User)?;
        story.findings.clear();
        Ok(story.head())
    }

    /// Generates the requested pages and points `state` at the new assets.
    /// Failed pages keep their previous assets and get a failure marker.
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        state: &mut StoryState,
        store: &dyn AssetStore,
        image_pages: &BTreeSet<PageId>,
        text_pages: &BTreeSet<PageId>,
        seed: u64,
        revision: &RevisionId,
        appendix: &[String],
    ) -> Result<Generated, EngineError> {
        let mut out = Generated::default();
        if (image_pages.is_empty() && text_pages.is_empty()) || state.pages.is_empty() {
            return Ok(out);
        }
        let bundle = compile(state)?;
        let mut image_failures: Vec<(PageId, String)> = Vec::new();
        let mut text_failures: Vec<(PageId, String)> = Vec::new();

        let mut prompts: Vec<_> = bundle
            .pages
            .iter()
            .filter(|p| image_pages.contains(&p.page))
            .cloned()
            .collect();
        if !appendix.is_empty() {
            for prompt in &mut prompts {
                prompt.text = format!("{}, {}", prompt.text, appendix.join(", "));
            }
        }
        let images = if prompts.is_empty() {
            Vec::new()
        } else {
            let request = ImageRequest {
                identity: bundle.identity.clone(),
                pages: prompts.clone(),
                seed,
                references: state
                    .characters
                    .iter()
                    .flat_map(|c| c.reference_assets.iter().map(move |a| (c.id.clone(), a.clone())))
                    .collect(),
            };
            let mut results = self.backends.image.generate_images(&request);
            if results.len() != prompts.len() {
                let message = format!(
                    "image backend returned {} results for {} pages",
                    results.len(),
                    prompts.len()
                );
                results = prompts
                    .iter()
                    .map(|_| Err(BackendError::Protocol(message.clone())))
                    .collect();
            }
            results
        };
        for (prompt, result) in prompts.iter().zip(images) {
            match result {
                Ok(image) => {
                    let hash = store.put(&image.bytes)?;
                    let page = state.page_mut(&prompt.page).expect("compiled from state");
                    page.image_asset = Some(asset_ref(AssetKind::PageImage, hash, revision));
                    out.images.insert(prompt.page.clone());
                }
                Err(e) => image_failures.push((prompt.page.clone(), e.to_string())),
            }
        }

        let requests: Vec<NarrationRequest> = state
            .pages_in_order()
            .into_iter()
            .filter(|p| text_pages.contains(&p.id))
            .map(|p| NarrationRequest {
                page: p.id.clone(),
                ordinal: p.ordinal,
                identity: bundle
                    .page(&p.id)
                    .map(|b| b.scoped_identity.clone())
                    .unwrap_or_default(),
                scene_description: p.scene_description.clone(),
                narrative_phase: p.narrative_phase,
                characters: p
                    .characters
                    .iter()
                    .filter_map(|c| state.character(c).map(|c| c.name.clone()))
                    .collect(),
                style: state.world.style.clone(),
                tone: state.world.tone.clone(),
            })
            .collect();
        let text = self.backends.text.as_ref();
        let mut narrations = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(TEXT_PARALLELISM) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|r| s.spawn(move || text.generate_narration(r)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            Err(BackendError::Failed("narration worker panicked".into()))
                        })
                    })
                    .collect()
            });
            narrations.extend(chunk.iter().map(|r| r.page.clone()).zip(results));
        }
        for (page_id, result) in narrations {
            match result {
                Ok(text) => {
                    let hash = store.put(text.as_bytes())?;
                    let page = state.page_mut(&page_id).expect("requested from state");
                    page.narration_asset = Some(asset_ref(AssetKind::NarrationText, hash, revision));
                    out.texts.insert(page_id);
                }
                Err(e) => text_failures.push((page_id, e.to_string())),
            }
        }

        for id in image_pages.union(text_pages) {
            let Some(page) = state.page_mut(id) else { continue };
            let image_failed = image_failures.iter().find(|(p, _)| p == id);
            let text_failed = text_failures.iter().find(|(p, _)| p == id);
            let previous = page.failure.take();
            let image = match image_failed {
                Some(_) => true,
                None => !image_pages.contains(id) && previous.as_ref().is_some_and(|f| f.image),
            };
            let text = match text_failed {
                Some(_) => true,
                None => !text_pages.contains(id) && previous.as_ref().is_some_and(|f| f.text),
            };
            if image || text {
                let message = image_failed
                    .or(text_failed)
                    .map(|(_, m)| m.clone())
                    .or_else(|| previous.map(|f| f.message))
                    .unwrap_or_default();
                out.warnings.push(format!("generation failed on {id}: {message}"));
                page.failure = Some(PageFailure { image, text, message });
                out.failed.insert(id.clone());
            }
        }
        // A page whose image failed did not get a new image, whatever else happened.
        for (page, _) in &image_failures {
            out.images.remove(page);
        }
        Ok(out)
    }
}

fn asset_ref(kind: AssetKind, hash: String, revision: &RevisionId) -> AssetRef {
    AssetRef {
        kind,
        uri: crate::persistence::asset_uri(&hash),
        content_hash: hash,
        revision: revision.clone(),
    }
}

fn page_assets(
    state: &StoryState,
    store: &dyn AssetStore,
    page: &PageId,
) -> Result<Option<PageAssets>, PersistenceError> {
    let Some(p) = state.page(page) else {
        return Ok(None);
    };
    let (Some(image), Some(narration)) = (&p.image_asset, &p.narration_asset) else {
        return Ok(None);
    };
    let image_bytes = store.get(&image.content_hash)?;
    let narration_text = String::from_utf8_lossy(&store.get(&narration.content_hash)?).into_owned();
    Ok(Some(PageAssets {
        narration: narration.clone(),
        narration_text,
        image: image.clone(),
        image_media_type: sniff_media_type(&image_bytes).to_owned(),
        image_bytes,
    }))
}

/// Numbers new findings, replacing earlier findings on the same pages.
fn surface(story: &mut Story, pages: &BTreeSet<PageId>, findings: Vec<CriticFinding>) -> Vec<CriticFinding> {
    story.findings.retain(|f| !pages.contains(&f.page));
    let mut numbered = Vec::with_capacity(findings.len());
    for mut finding in findings {
        finding.id = format!("f{}", story.next_finding);
        story.next_finding += 1;
        numbered.push(finding);
    }
    story.findings.extend(numbered.iter().cloned());
    numbered
}
