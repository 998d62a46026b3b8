//! Evaluation quantities: adjacent-page visual consistency and per-edit cost
//! (pages changed, turns, wall-clock), computed from embeddings and the
//! revision history.

use std::collections::BTreeSet;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{BackendConfig, BackendError};
use crate::edit::{History, Origin, RevisionKind};
use crate::ids::{PageId, RevisionId};
use crate::orchestrator::AssetStore;
use crate::persistence::PersistenceError;
use crate::state::StoryState;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("consistency needs at least 2 pages, got {0}")]
    TooFewPages(usize),
    #[error("embedding {index} has zero norm")]
    DegenerateEmbedding { index: usize },
    #[error("embedding {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("page {0} has no image")]
    MissingImage(PageId),
    #[error("history has no user edits")]
    NoEdits,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

/// Maps image bytes to a vector. The dimension is fixed per backend.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, image: &[u8]) -> Result<Vec<f64>, BackendError>;
}

/// Hash-seeded pseudo-random unit vectors: equal bytes give equal vectors.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbedding {
    pub dimension: usize,
}

impl Default for MockEmbedding {
    fn default() -> Self {
        Self { dimension: 16 }
    }
}

impl EmbeddingBackend for MockEmbedding {
    fn embed(&self, image: &[u8]) -> Result<Vec<f64>, BackendError> {
        let mut rng = ChaCha8Rng::from_seed(Sha256::digest(image).into());
        loop {
            let v: Vec<f64> = (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return Ok(v.into_iter().map(|x| x / norm).collect());
            }
        }
    }
}

/// Embedding service speaking `{model, image_b64}` → `{embedding: [..]}`.
#[derive(Debug)]
pub struct HttpEmbedding {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpEmbedding {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        Ok(Self {
            config,
            client,
        })
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn embed(&self, image: &[u8]) -> Result<Vec<f64>, BackendError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "image_b64": base64::engine::general_purpose::STANDARD.encode(image),
        });
        let mut call = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| crate::agents::classify_reqwest(e, &self.config))?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Protocol(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f64>,
        }
        let reply: Reply = serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(reply.embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Cosine of pages i and i+1, in page order.
    pub per_adjacent_pair: Vec<f64>,
    pub mean: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cosine similarity over adjacent pairs.
pub fn consistency(embeddings: &[Vec<f64>]) -> Result<ConsistencyReport, MetricsError> {
    if embeddings.len() < 2 {
        return Err(MetricsError::TooFewPages(embeddings.len()));
    }
    let expected = embeddings[0].len();
    let mut norms = Vec::with_capacity(embeddings.len());
    for (index, v) in embeddings.iter().enumerate() {
        if v.len() != expected {
            return Err(MetricsError::DimensionMismatch {
                index,
                expected,
                found: v.len(),
            });
        }
        let norm = dot(v, v).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(MetricsError::DegenerateEmbedding { index });
        }
        norms.push(norm);
    }
    let per_adjacent_pair: Vec<f64> = embeddings
        .windows(2)
        .zip(norms.windows(2))
        .map(|(v, n)| dot(&v[0], &v[1]) / (n[0] * n[1]))
        .collect();
    let mean = per_adjacent_pair.iter().sum::<f64>() / per_adjacent_pair.len() as f64;
    Ok(ConsistencyReport {
        per_adjacent_pair,
        mean,
    })
}

/// Embeds every page image in order and scores the story.
pub fn story_consistency(
    state: &StoryState,
    store: &dyn AssetStore,
    embedder: &dyn EmbeddingBackend,
) -> Result<ConsistencyReport, MetricsError> {
    let mut embeddings = Vec::with_capacity(state.pages.len());
    for page in state.pages_in_order() {
        let image = page
            .image_asset
            .as_ref()
            .ok_or_else(|| MetricsError::MissingImage(page.id.clone()))?;
        embeddings.push(embedder.embed(&store.get(&image.content_hash)?)?);
    }
    consistency(&embeddings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRow {
    pub revision: RevisionId,
    pub pages_changed: usize,
    pub turns: u32,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEfficiencyReport {
    pub per_edit: Vec<EditRow>,
    pub mean_pages_changed: f64,
    pub mean_turns: f64,
    pub mean_elapsed_seconds: f64,
}

struct OpenEdit {
    revision: RevisionId,
    pages: BTreeSet<PageId>,
    elapsed_ms: u64,
}

impl OpenEdit {
    fn close(self) -> EditRow {
        EditRow {
            revision: self.revision,
            pages_changed: self.pages.len(),
            turns: 1,
            elapsed_seconds: self.elapsed_ms as f64 / 1000.0,
        }
    }
}

/// One row per user edit. Critic revisions that follow an edit add their
/// pages and time to it; creation, import, revert and retry are not edits.
pub fn edit_efficiency(history: &History) -> Result<EditEfficiencyReport, MetricsError> {
    let mut rows = Vec::new();
    let mut open: Option<OpenEdit> = None;
    for revision in history.revisions() {
        let is_edit = revision.origin == Origin::User
            && matches!(revision.kind, RevisionKind::Edit | RevisionKind::PromptOnlyEdit);
        if is_edit {
            rows.extend(open.take().map(OpenEdit::close));
            open = Some(OpenEdit {
                revision: revision.id.clone(),
                pages: revision.regenerated_image_pages.clone(),
                elapsed_ms: revision.elapsed_ms,
            });
        } else if revision.origin == Origin::Critic {
            if let Some(edit) = open.as_mut() {
                edit.pages.extend(revision.regenerated_image_pages.iter().cloned());
                edit.elapsed_ms += revision.elapsed_ms;
            }
        } else {
            rows.extend(open.take().map(OpenEdit::close));
        }
    }
    rows.extend(open.take().map(OpenEdit::close));
    if rows.is_empty() {
        return Err(MetricsError::NoEdits);
    }
    let n = rows.len() as f64;
    Ok(EditEfficiencyReport {
        mean_pages_changed: rows.iter().map(|r| r.pages_changed as f64).sum::<f64>() / n,
        mean_turns: rows.iter().map(|r| f64::from(r.turns)).sum::<f64>() / n,
        mean_elapsed_seconds: rows.iter().map(|r| r.elapsed_seconds).sum::<f64>() / n,
        per_edit: rows,
    })
}

/// Per-edit rows as CSV with a header line.
pub fn edit_rows_csv(report: &EditEfficiencyReport) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &report.per_edit {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
