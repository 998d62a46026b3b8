use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{FromRequest, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use storystate_core::edit::{EditBatch, EditOp};
use storystate_core::ids::{PageId, RevisionId, StoryId};
use storystate_core::metrics::{edit_efficiency, story_consistency};
use storystate_core::orchestrator::{
    sniff_media_type, AssetStore, EditInput, Engine, EngineMode, ProjectSession, ReadOnlyAssets,
};
use storystate_core::prompt::{compile, export_interchange};
use storystate_core::state::AssetKind;

use crate::jobs::JobStatus;
use crate::{openapi, path_of, ApiError, AppState, CONTENT_HASH_HEADER};

type App = Arc<AppState>;

/// Upper bound on pages per story accepted over the API.
const MAX_PAGES: usize = 64;

pub(crate) fn routes(state: App) -> Router {
    Router::new()
        .route("/openapi.json", get(openapi_doc))
        .route("/stories", post(create_story))
        .route("/stories/{id}", get(get_story))
        .route("/stories/{id}/history", get(history))
        .route("/stories/{id}/metrics", get(metrics))
        .route("/stories/{id}/prompts", get(prompts))
        .route("/stories/{id}/pages/{pid}/assets/{kind}", get(asset))
        .route("/stories/{id}/pages/{pid}/retry", post(retry_page))
        .route("/stories/{id}/edits", post(edit))
        .route("/stories/{id}/revert", post(revert))
        .route("/stories/{id}/critic/{finding_id}/accept", post(accept_finding))
        .route("/jobs/{id}", get(job))
        .with_state(state)
}

/// JSON body whose parse failures become `validation_error`.
#[derive(FromRequest)]
#[from_request(via(Json), rejection(ApiError))]
struct Body<T>(T);

/// A finished mutation: response status, JSON body and the new head.
struct Outcome {
    status: StatusCode,
    body: Value,
    head: RevisionId,
    location: Option<String>,
}

impl Outcome {
    fn ok(body: impl serde::Serialize, head: RevisionId) -> Result<Self, ApiError> {
        Ok(Self {
            status: StatusCode::OK,
            body: serde_json::to_value(body).map_err(|e| ApiError::internal(e.to_string()))?,
            head,
            location: None,
        })
    }
}

impl IntoResponse for Outcome {
    fn into_response(self) -> Response {
        let mut headers = HeaderMap::new();
        headers.insert(header::ETAG, etag(self.head.as_str()));
        if let Some(location) = self.location.and_then(|l| HeaderValue::from_str(&l).ok()) {
            headers.insert(header::LOCATION, location);
        }
        (self.status, headers, Json(self.body)).into_response()
    }
}

fn etag(value: &str) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{value}\"")).unwrap_or(HeaderValue::from_static("\"\""))
}

fn header_text(headers: &HeaderMap, name: header::HeaderName) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_owned)
}

/// True if any entity tag in an `If-Match` / `If-None-Match` list names `tag`.
fn tag_matches(list: &str, tag: &str) -> bool {
    list.split(',').map(str::trim).any(|t| {
        t == "*" || t.trim_start_matches("W/").trim_matches('"') == tag
    })
}

fn check_if_match(session: &ProjectSession, if_match: &Option<String>) -> Result<(), ApiError> {
    let head = session.story.head();
    match if_match {
        Some(list) if !tag_matches(list, head.as_str()) => Err(ApiError::new(
            "precondition_failed",
            format!("story is at {head}, not {}", list.trim()),
        )
        .with_detail(json!({ "head": head }))),
        _ => Ok(()),
    }
}

fn open(dir: &std::path::Path) -> Result<ProjectSession, ApiError> {
    Ok(ProjectSession::open(dir)?)
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("worker failed: {e}"))
}

/// Runs `work` on the blocking pool, inline or as a job in async mode.
async fn dispatch<F>(app: App, story_id: String, work: F) -> Result<Response, ApiError>
where
    F: FnOnce(&AppState) -> Result<Outcome, ApiError> + Send + 'static,
{
    if app.settings.async_jobs {
        let job = app.jobs.start(&story_id);
        let (worker_app, job_id) = (app.clone(), job.clone());
        tokio::spawn(async move {
            let inner = worker_app.clone();
            let status = match tokio::task::spawn_blocking(move || work(&inner)).await {
                Ok(Ok(outcome)) => JobStatus::Done {
                    http_status: outcome.status.as_u16(),
                    result: outcome.body,
                },
                Ok(Err(error)) => JobStatus::Failed {
                    http_status: error.status.as_u16(),
                    error,
                },
                Err(e) => JobStatus::Failed {
                    http_status: 500,
                    error: join_error(e),
                },
            };
            worker_app.jobs.finish(&job_id, status);
        });
        let url = format!("/jobs/{job}");
        let body = json!({ "job_id": job, "story_id": story_id, "status_url": url });
        return Ok((StatusCode::ACCEPTED, [(header::LOCATION, url)], Json(body)).into_response());
    }
    let worker_app = app.clone();
    let outcome = tokio::task::spawn_blocking(move || work(&worker_app))
        .await
        .map_err(join_error)??;
    Ok(outcome.into_response())
}

/// Common shape of the mutating endpoints on an existing story.
async fn mutate<F>(app: App, id: String, headers: &HeaderMap, work: F) -> Result<Response, ApiError>
where
    F: FnOnce(&AppState, &mut ProjectSession) -> Result<Outcome, ApiError> + Send + 'static,
{
    let dir = app.story_dir(&id)?;
    let if_match = header_text(headers, header::IF_MATCH);
    let guard = app.acquire(&id).await?;
    dispatch(app, id, move |app| {
        let _guard = guard;
        let mut session = open(&dir)?;
        check_if_match(&session, &if_match)?;
        let outcome = work(app, &mut session);
        // Whatever was committed before a failure is kept.
        session.save()?;
        outcome
    })
    .await
}

async fn openapi_doc() -> Json<Value> {
    Json(openapi())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    prompt: String,
    n_pages: usize,
    #[serde(default)]
    seed: u64,
    /// Directory name for the story; minted when absent.
    #[serde(default)]
    id: Option<String>,
}

async fn create_story(State(app): State<App>, Body(body): Body<CreateBody>) -> Result<Response, ApiError> {
    if body.prompt.trim().is_empty() {
        return Err(ApiError::validation("prompt is empty"));
    }
    if body.n_pages == 0 || body.n_pages > MAX_PAGES {
        return Err(ApiError::validation(format!("n_pages must be between 1 and {MAX_PAGES}")));
    }
    let (id, dir) = app.reserve_story(body.id.as_deref())?;
    let guard = app.acquire(&id).await?;
    let story_id = id.clone();
    dispatch(app, id.clone(), move |app| {
        let _guard = guard;
        let created = ProjectSession::create(
            &dir,
            &app.engine,
            StoryId::new(&story_id),
            &body.prompt,
            body.n_pages,
            body.seed,
        );
        let (session, result) = match created {
            Ok(ok) => ok,
            Err(e) => {
                discard_reserved(&dir);
                return Err(e.into());
            }
        };
        let head = session.story.head();
        let mut outcome = Outcome::ok(
            json!({ "story_id": story_id, "revision": head, "result": result }),
            head,
        )?;
        outcome.status = StatusCode::CREATED;
        outcome.location = Some(format!("/stories/{story_id}"));
        Ok(outcome)
    })
    .await
}

fn discard_reserved(dir: &PathBuf) {
    if !dir.join("story.json").exists() {
        if let Err(e) = std::fs::remove_dir_all(dir) {
            tracing::warn!(dir = %path_of(dir), "cannot remove reserved story directory: {e}");
        }
    }
}

async fn get_story(State(app): State<App>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dir = app.story_dir(&id)?;
    let (story, session) = tokio::task::spawn_blocking(move || ProjectSession::peek(&dir))
        .await
        .map_err(join_error)??;
    let head = story.head();
    Outcome::ok(
        json!({
            "story_id": id,
            "head": head,
            "seed": session.seed,
            "state": story.state,
            "findings": story.findings,
        }),
        head,
    )
    .map(IntoResponse::into_response)
}

async fn history(State(app): State<App>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dir = app.story_dir(&id)?;
    let (story, _) = tokio::task::spawn_blocking(move || ProjectSession::peek(&dir))
        .await
        .map_err(join_error)??;
    let mut revisions = Vec::with_capacity(story.history.len());
    for revision in story.history.revisions() {
        let mut value = serde_json::to_value(revision).map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(map) = value.as_object_mut() {
            map.remove("state");
        }
        revisions.push(value);
    }
    let head = story.head();
    Outcome::ok(json!({ "story_id": id, "head": head, "revisions": revisions }), head)
        .map(IntoResponse::into_response)
}

async fn metrics(State(app): State<App>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dir = app.story_dir(&id)?;
    let worker = app.clone();
    let body = tokio::task::spawn_blocking(move || -> Result<(Value, RevisionId), ApiError> {
        let (story, _) = ProjectSession::peek(&dir)?;
        let store = ReadOnlyAssets::new(&dir);
        let consistency = story_consistency(&story.state, &store, worker.embedder.as_ref());
        let efficiency = edit_efficiency(&story.history);
        let head = story.head();
        Ok((
            json!({
                "story_id": id,
                "head": head,
                "consistency": consistency.as_ref().ok(),
                "consistency_error": consistency.as_ref().err().map(ToString::to_string),
                "edit_efficiency": efficiency.as_ref().ok(),
                "edit_efficiency_error": efficiency.as_ref().err().map(ToString::to_string),
            }),
            head,
        ))
    })
    .await
    .map_err(join_error)??;
    Outcome::ok(body.0, body.1).map(IntoResponse::into_response)
}

#[derive(Debug, Deserialize)]
struct PromptQuery {
    format: Option<String>,
}

async fn prompts(
    State(app): State<App>,
    Path(id): Path<String>,
    query: Result<Query<PromptQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    let dir = app.story_dir(&id)?;
    let (story, _) = tokio::task::spawn_blocking(move || ProjectSession::peek(&dir))
        .await
        .map_err(join_error)??;
    let bundle = compile(&story.state)?;
    let head = story.head();
    match query.format.as_deref() {
        None | Some("json") => Outcome::ok(bundle, head).map(IntoResponse::into_response),
        Some("interchange") => Ok((
            [
                (header::CONTENT_TYPE, HeaderValue::from_static("text/plain; charset=utf-8")),
                (header::ETAG, etag(head.as_str())),
            ],
            export_interchange(&bundle),
        )
            .into_response()),
        Some(other) => Err(ApiError::validation(format!(
            "unknown format {other:?}; expected json or interchange"
        ))),
    }
}

fn asset_kind(raw: &str) -> Option<AssetKind> {
    match raw {
        "image" | "page_image" => Some(AssetKind::PageImage),
        "narration" | "narration_text" | "text" => Some(AssetKind::NarrationText),
        _ => None,
    }
}

async fn asset(
    State(app): State<App>,
    Path((id, pid, kind)): Path<(String, String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let kind = asset_kind(&kind)
        .ok_or_else(|| ApiError::not_found(format!("unknown asset kind {kind}; use image or narration")))?;
    let dir = app.story_dir(&id)?;
    let if_none_match = header_text(&headers, header::IF_NONE_MATCH);
    let page = PageId::new(pid);
    let (bytes, hash) = tokio::task::spawn_blocking(move || -> Result<(Option<Vec<u8>>, String), ApiError> {
        let (story, _) = ProjectSession::peek(&dir)?;
        let state = story.state;
        let page_state = state
            .page(&page)
            .ok_or_else(|| ApiError::not_found(format!("unknown page {page}")))?;
        let asset = match kind {
            AssetKind::PageImage => page_state.image_asset.as_ref(),
            _ => page_state.narration_asset.as_ref(),
        }
        .ok_or_else(|| ApiError::not_found(format!("page {page} has no {kind:?} asset")))?;
        let hash = asset.content_hash.clone();
        if if_none_match.as_deref().is_some_and(|list| tag_matches(list, &hash)) {
            return Ok((None, hash));
        }
        let bytes = ReadOnlyAssets::new(&dir)
            .get(&hash)
            ?;
        Ok((Some(bytes), hash))
    })
    .await
    .map_err(join_error)??;
    let common = [
        (header::ETAG, etag(&hash)),
        (
            header::HeaderName::from_static(CONTENT_HASH_HEADER),
            HeaderValue::from_str(&hash).unwrap_or(HeaderValue::from_static("")),
        ),
        (header::CACHE_CONTROL, HeaderValue::from_static("no-cache")),
    ];
    let Some(bytes) = bytes else {
        return Ok((StatusCode::NOT_MODIFIED, common).into_response());
    };
    let media_type = match kind {
        AssetKind::PageImage => sniff_media_type(&bytes),
        _ => "text/plain; charset=utf-8",
    };
    Ok((
        common,
        [(header::CONTENT_TYPE, HeaderValue::from_static(media_type))],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeOverrides {
    explicit_state: Option<bool>,
    page_level_regen: Option<bool>,
    critic_enabled: Option<bool>,
    critic_max_iters: Option<u32>,
    auto_accept_critic: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    text: Option<String>,
    ops: Option<Vec<EditOp>>,
    #[serde(default)]
    note: Option<String>,
    /// `full`, `no-state`, `no-page-regen` or `no-critic`.
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    mode_overrides: Option<ModeOverrides>,
}

fn resolve_mode(base: EngineMode, name: Option<&str>, overrides: Option<ModeOverrides>) -> Result<EngineMode, ApiError> {
    let mut mode = match name {
        Some(name) => base
            .with_ablation(name)
            .ok_or_else(|| ApiError::validation(format!("unknown mode {name:?}")))?,
        None => base,
    };
    let o = overrides.unwrap_or_default();
    mode.explicit_state = o.explicit_state.unwrap_or(mode.explicit_state);
    mode.page_level_regen = o.page_level_regen.unwrap_or(mode.page_level_regen);
    mode.critic_enabled = o.critic_enabled.unwrap_or(mode.critic_enabled);
    mode.critic_max_iters = o.critic_max_iters.unwrap_or(mode.critic_max_iters);
    mode.auto_accept_critic = o.auto_accept_critic.unwrap_or(mode.auto_accept_critic);
    mode.validate()?;
    Ok(mode)
}

async fn edit(
    State(app): State<App>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Body(body): Body<EditBody>,
) -> Result<Response, ApiError> {
    let mode = resolve_mode(app.mode, body.mode.as_deref(), body.mode_overrides)?;
    let input = match (body.text, body.ops) {
        (Some(text), None) => {
            if text.trim().is_empty() {
                return Err(ApiError::validation("text is empty"));
            }
            EditInput::Text(text)
        }
        (None, Some(ops)) => {
            let batch = EditBatch::user(ops);
            EditInput::Batch(match body.note {
                Some(note) => batch.with_note(note),
                None => batch,
            })
        }
        _ => return Err(ApiError::validation("give exactly one of text or ops")),
    };
    mutate(app, id, &headers, move |app, session| {
        let result = app
            .engine
            .run_edit_cycle(&mut session.story, &session.project, input, &mode, session.seed)?;
        Outcome::ok(&result, session.story.head())
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RevertBody {
    revision: RevisionId,
}

async fn revert(
    State(app): State<App>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Body(body): Body<RevertBody>,
) -> Result<Response, ApiError> {
    mutate(app, id, &headers, move |_, session| {
        let head = Engine::revert(&mut session.story, &body.revision)?;
        Outcome::ok(json!({ "revision": head, "reverted_to": body.revision }), head)
    })
    .await
}

async fn accept_finding(
    State(app): State<App>,
    Path((id, finding)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    mutate(app, id, &headers, move |app, session| {
        let result = app.engine.accept_finding(
            &mut session.story,
            &session.project,
            &finding,
            &app.mode,
            session.seed,
        )?;
        Outcome::ok(&result, session.story.head())
    })
    .await
}

async fn retry_page(
    State(app): State<App>,
    Path((id, pid)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    mutate(app, id, &headers, move |app, session| {
        let result = app.engine.retry_page(
            &mut session.story,
            &session.project,
            &PageId::new(pid),
            session.seed,
        )?;
        Outcome::ok(&result, session.story.head())
    })
    .await
}

async fn job(State(app): State<App>, Path(id): Path<String>) -> Result<Json<crate::Job>, ApiError> {
    app.jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entity_tag_lists() {
        assert!(tag_matches("\"r3\"", "r3"));
        assert!(tag_matches("W/\"r3\", \"r4\"", "r4"));
        assert!(tag_matches("*", "r9"));
        assert!(tag_matches("r3", "r3"));
        assert!(!tag_matches("\"r2\"", "r3"));
    }

    #[test]
    fn mode_resolution() {
        let base = EngineMode {
            critic_max_iters: 5,
            ..EngineMode::full()
        };
        let mode = resolve_mode(base, Some("no-page-regen"), None).unwrap();
        assert!(!mode.page_level_regen);
        assert_eq!(mode.critic_max_iters, 5);
        let mode = resolve_mode(
            base,
            None,
            Some(ModeOverrides {
                auto_accept_critic: Some(true),
                ..ModeOverrides::default()
            }),
        )
        .unwrap();
        assert!(mode.auto_accept_critic);
        assert!(resolve_mode(base, Some("turbo"), None).is_err());
        assert!(resolve_mode(
            base,
            None,
            Some(ModeOverrides {
                critic_max_iters: Some(0),
                ..ModeOverrides::default()
            })
        )
        .is_err());
    }
}
