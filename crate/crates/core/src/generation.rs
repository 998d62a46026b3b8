//! Narration and image backends.
//!
//! The engine hands a [`TextBackend`] one page at a time and an
//! [`ImageBackend`] the identity prompt plus every page prompt to render in
//! one request. Both ship a deterministic mock. The mock image is a tiny
//! binary PPM whose header comments carry the seed, page id and the prompt
//! it was rendered from, which lets the mock critic "see" it.

use std::collections::BTreeMap;
use std::sync::Mutex;

use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::agents::{BackendConfig, BackendError, ChatBackend, ChatRequest, RequestLimiter, NARRATION_SCHEMA};
use crate::ids::{CharacterId, PageId};
use crate::prompt::{english_list, IdentityPrompt, PagePrompt};
use crate::state::{AssetRef, NarrativePhase};

pub const MOCK_IMAGE_MEDIA_TYPE: &str = "image/x-portable-pixmap";
const MOCK_SIDE: usize = 8;
const PROMPT_TAG: &str = "# prompt: ";

/// Everything a page's narration depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrationRequest {
    pub page: PageId,
    pub ordinal: u32,
    /// Identity prompt scoped to the page's characters.
    pub identity: String,
    pub scene_description: String,
    pub narrative_phase: NarrativePhase,
    pub characters: Vec<String>,
    pub style: String,
    pub tone: String,
}

pub trait TextBackend: Send + Sync {
    fn generate_narration(&self, request: &NarrationRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRequest {
    pub identity: IdentityPrompt,
    pub pages: Vec<PagePrompt>,
    pub seed: u64,
    /// Character reference images, passed through untouched.
    pub references: Vec<(CharacterId, AssetRef)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

pub trait ImageBackend: Send + Sync {
    /// One result per requested page, in request order.
    fn generate_images(&self, request: &ImageRequest) -> Vec<Result<GeneratedImage, BackendError>>;
}

/// Per-page seed derived from the request seed.
pub fn page_seed(seed: u64, page: &PageId) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(page.as_str().as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn escape_comment(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape_comment(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Renders the mock placeholder image for `prompt`.
pub fn render_mock_image(seed: u64, page: &PageId, prompt: &str) -> Vec<u8> {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(prompt.as_bytes())
        .finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    let mut pixels = vec![0u8; MOCK_SIDE * MOCK_SIDE * 3];
    rng.fill_bytes(&mut pixels);
    let mut bytes = format!(
        "P6\n# storystate mock seed={seed} page={page}\n{PROMPT_TAG}{}\n{MOCK_SIDE} {MOCK_SIDE}\n255\n",
        escape_comment(prompt)
    )
    .into_bytes();
    bytes.extend_from_slice(&pixels);
    bytes
}

/// The prompt embedded in a mock image, if `bytes` is one.
pub fn extract_mock_prompt(bytes: &[u8]) -> Option<String> {
    if !bytes.starts_with(b"P6\n") {
        return None;
    }
    let header_end = bytes.windows(5).position(|w| w == b"\n255\n")?;
    let header = std::str::from_utf8(&bytes[..header_end]).ok()?;
    header
        .lines()
        .find_map(|line| line.strip_prefix(PROMPT_TAG))
        .map(unescape_comment)
}

/// A text substitution applied to prompts before rendering, simulating a
/// backend that ignores part of what it was asked for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Drift {
    pub page: Option<PageId>,
    pub from: String,
    pub to: String,
    /// Renders left to corrupt; `None` means forever.
    pub remaining: Option<usize>,
}

#[derive(Debug, Default)]
struct MockImageFaults {
    drifts: Vec<Drift>,
    /// Page → failures left (`None` = always fail).
    failures: BTreeMap<PageId, Option<usize>>,
}

/// Deterministic image backend with drift and failure injection.
#[derive(Debug, Default)]
pub struct MockImageBackend {
    faults: Mutex<MockImageFaults>,
    calls: Mutex<Vec<Vec<PageId>>>,
}

impl MockImageBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_drift(&self, drift: Drift) {
        self.faults.lock().unwrap_or_else(|e| e.into_inner()).drifts.push(drift);
    }

    /// Makes the next `times` renders of `page` fail (`None` = always).
    pub fn fail_page(&self, page: PageId, times: Option<usize>) {
        self.faults
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .failures
            .insert(page, times);
    }

    pub fn clear_faults(&self) {
        *self.faults.lock().unwrap_or_else(|e| e.into_inner()) = MockImageFaults::default();
    }

    /// Pages requested per call, oldest first.
    pub fn calls(&self) -> Vec<Vec<PageId>> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn rendered_pages(&self) -> usize {
        self.calls().iter().map(Vec::len).sum()
    }

    fn render(&self, seed: u64, page: &PagePrompt) -> Result<GeneratedImage, BackendError> {
        let mut faults = self.faults.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(left) = faults.failures.get_mut(&page.page) {
            let fail = match left {
                None => true,
                Some(0) => false,
                Some(n) => {
                    *n -= 1;
                    true
                }
            };
            if fail {
                return Err(BackendError::Failed(format!("injected failure on {}", page.page)));
            }
        }
        let mut prompt = page.effective_text();
        for drift in faults.drifts.iter_mut() {
            let applies = drift.page.as_ref().is_none_or(|p| *p == page.page)
                && drift.remaining != Some(0)
                && prompt.contains(&drift.from);
            if applies {
                prompt = prompt.replace(&drift.from, &drift.to);
                if let Some(n) = drift.remaining.as_mut() {
                    *n -= 1;
                }
            }
        }
        Ok(GeneratedImage {
            bytes: render_mock_image(page_seed(seed, &page.page), &page.page, &prompt),
            media_type: MOCK_IMAGE_MEDIA_TYPE.into(),
        })
    }
}

impl ImageBackend for MockImageBackend {
    fn generate_images(&self, request: &ImageRequest) -> Vec<Result<GeneratedImage, BackendError>> {
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.pages.iter().map(|p| p.page.clone()).collect());
        request
            .pages
            .iter()
            .map(|p| self.render(request.seed, p))
            .collect()
    }
}

/// Deterministic narration: a fixed opener per phase plus the scene.
#[derive(Debug, Default)]
pub struct MockTextBackend {
    calls: Mutex<Vec<PageId>>,
}

impl MockTextBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> Vec<PageId> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub(crate) fn mock_narration(request: &NarrationRequest) -> String {
    let opener = match request.narrative_phase {
        NarrativePhase::Introduce => "Our story begins",
        NarrativePhase::Develop => "Then",
        NarrativePhase::Resolve => "At last",
    };
    let mut text = format!("{opener}: {}.", request.scene_description.trim_end_matches('.'));
    match request.characters.as_slice() {
        [] => {}
        [one] => text.push_str(&format!(" {one} is here.")),
        many => text.push_str(&format!(" {} are here.", english_list(many))),
    }
    text
}

impl TextBackend for MockTextBackend {
    fn generate_narration(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.page.clone());
        Ok(mock_narration(request))
    }
}

/// Narration through a chat backend using the `narration.v1` template.
pub struct ChatTextBackend<B> {
    pub chat: B,
}

impl<B: ChatBackend> TextBackend for ChatTextBackend<B> {
    fn generate_narration(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        let user_text = serde_json::to_string(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let reply = self.chat.send(&ChatRequest {
            system_text: crate::agents::system_template(NARRATION_SCHEMA)
                .unwrap_or_default()
                .to_owned(),
            user_text,
            response_schema_id: NARRATION_SCHEMA.into(),
            attachments: vec![],
        })?;
        let text = reply.text.trim();
        if text.is_empty() {
            return Err(BackendError::Protocol("empty narration".into()));
        }
        Ok(text.to_owned())
    }
}

/// Image backend speaking a small JSON protocol:
/// `{identity_prompt, pages: [{page, prompt}], seed, references}` →
/// `{images: [{b64, media_type} | {error}]}`.
#[derive(Debug)]
pub struct HttpImageBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: RequestLimiter,
}

impl HttpImageBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        Ok(Self {
            limiter: RequestLimiter::new(config.max_parallel_requests),
            config,
            client,
        })
    }

    fn call(&self, request: &ImageRequest) -> Result<Vec<Result<GeneratedImage, BackendError>>, BackendError> {
        let body = json!({
            "model": self.config.model,
            "identity_prompt": request.identity.text,
            "pages": request.pages.iter().map(|p| json!({"page": p.page, "prompt": p.text, "scoped_identity": p.scoped_identity})).collect::<Vec<_>>(),
            "seed": request.seed,
            "references": request.references.iter().map(|(c, a)| json!({"character": c, "uri": a.uri, "content_hash": a.content_hash})).collect::<Vec<_>>(),
        });
        let mut call = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = self
            .limiter
            .run(|| call.send())
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
        struct Item {
            b64: Option<String>,
            media_type: Option<String>,
            error: Option<String>,
        }
        #[derive(Deserialize)]
        struct Reply {
            images: Vec<Item>,
        }
        let reply: Reply = serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        if reply.images.len() != request.pages.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} images, got {}",
                request.pages.len(),
                reply.images.len()
            )));
        }
        Ok(reply
            .images
            .into_iter()
            .map(|item| match (item.b64, item.error) {
                (Some(b64), _) => base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map(|bytes| GeneratedImage {
                        bytes,
                        media_type: item.media_type.unwrap_or_else(|| "image/png".into()),
                    })
                    .map_err(|e| BackendError::Protocol(e.to_string())),
                (None, Some(error)) => Err(BackendError::Failed(error)),
                (None, None) => Err(BackendError::Protocol("image entry has neither b64 nor error".into())),
            })
            .collect())
    }
}

impl ImageBackend for HttpImageBackend {
    fn generate_images(&self, request: &ImageRequest) -> Vec<Result<GeneratedImage, BackendError>> {
        match self.call(request) {
            Ok(results) => results,
            Err(e) => request.pages.iter().map(|_| Err(e.clone())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::compile;
    use crate::testkit::sample_story;

    #[test]
    fn mock_image_round_trips_its_prompt() {
        let page = PageId::new("p1");
        let bytes = render_mock_image(7, &page, "line one\nline \\two");
        assert_eq!(extract_mock_prompt(&bytes).as_deref(), Some("line one\nline \\two"));
        assert_eq!(bytes, render_mock_image(7, &page, "line one\nline \\two"));
        assert_ne!(bytes, render_mock_image(8, &page, "line one\nline \\two"));
        assert_eq!(extract_mock_prompt(b"\x89PNG"), None);
    }

    #[test]
    fn one_shot_drift_and_failures() {
        let bundle = compile(&sample_story(3)).unwrap();
        let backend = MockImageBackend::new();
        backend.add_drift(Drift {
            page: None,
            from: "yellow raincoat".into(),
            to: "red raincoat".into(),
            remaining: Some(1),
        });
        backend.fail_page(bundle.pages[2].page.clone(), Some(1));
        let request = ImageRequest {
            identity: bundle.identity.clone(),
            pages: bundle.pages.clone(),
            seed: 1,
            references: Vec::new(),
        };
        let first = backend.generate_images(&request);
        assert_eq!(first.len(), 3);
        let p1 = extract_mock_prompt(&first[0].as_ref().unwrap().bytes).unwrap();
        assert!(p1.contains("red raincoat") && !p1.contains("yellow raincoat"));
        let p2 = extract_mock_prompt(&first[1].as_ref().unwrap().bytes).unwrap();
        assert!(p2.contains("yellow raincoat"));
        assert!(first[2].is_err());
        let second = backend.generate_images(&request);
        assert!(second.iter().all(Result::is_ok));
        assert_eq!(backend.rendered_pages(), 6);
    }
}
