use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use storystate_core::agents::{BackendError, MockChatBackend, ScriptedChatBackend};
use storystate_core::config::{BusyPolicy, ServerSettings};
use storystate_core::generation::{MockImageBackend, MockTextBackend, NarrationRequest, TextBackend};
use storystate_core::metrics::MockEmbedding;
use storystate_core::orchestrator::{Backends, EngineMode, ProjectSession};
use storystate_core::persistence::{import_dataset, Project};
use storystate_core::prompt::{export_record, parse_records};
use storystate_server::{router, AppState};

const REFERENCE: &str = include_str!("../../core/tests/fixtures/reference_records.txt");
const SHY_BOY: &str = "a shy boy finds a lost robot in the city";

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|_| {
            panic!("not json: {}", String::from_utf8_lossy(&self.bytes))
        })
    }

    fn header(&self, name: &str) -> &str {
        self.headers.get(name).unwrap().to_str().unwrap()
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>, extra: &[(&str, &str)]) -> Reply {
    let mut builder = Request::builder().method(method).uri(uri);
    for (k, v) in extra {
        builder = builder.header(*k, *v);
    }
    let request = match body {
        Some(body) => builder
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, &[]).await
}

async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, Method::POST, uri, Some(body), &[]).await
}

fn mock_app(root: &std::path::Path) -> Router {
    router(Arc::new(AppState::mock(root)))
}

async fn create(app: &Router) -> String {
    let reply = post(app, "/stories", json!({"prompt": SHY_BOY, "n_pages": 10, "seed": 7})).await;
    assert_eq!(reply.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&reply.bytes));
    let body = reply.json();
    let id = body["story_id"].as_str().unwrap().to_owned();
    assert_eq!(reply.header("location"), format!("/stories/{id}"));
    assert_eq!(reply.header("etag"), "\"r0\"");
    assert_eq!(body["result"]["regenerated_image_pages"].as_array().unwrap().len(), 10);
    id
}

fn pages_of_first_character(state: &Value) -> BTreeSet<String> {
    let boy = state["characters"][0]["id"].as_str().unwrap();
    state["pages"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["characters"].as_array().unwrap().iter().any(|c| c == boy))
        .map(|p| p["id"].as_str().unwrap().to_owned())
        .collect()
}

fn string_set(value: &Value) -> BTreeSet<String> {
    value
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect()
}

fn image_hashes(state: &Value) -> Vec<String> {
    state["pages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["image_asset"]["content_hash"].as_str().unwrap().to_owned())
        .collect()
}

#[tokio::test]
async fn create_then_read_story_and_assets() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    assert_eq!(id, "s1");
    assert_eq!(create(&app).await, "s2");

    let story = get(&app, &format!("/stories/{id}")).await;
    assert_eq!(story.status, StatusCode::OK);
    let body = story.json();
    assert_eq!(body["head"], "r0");
    assert_eq!(body["state"]["pages"].as_array().unwrap().len(), 10);

    let hash = body["state"]["pages"][2]["image_asset"]["content_hash"].as_str().unwrap().to_owned();
    let pid = body["state"]["pages"][2]["id"].as_str().unwrap().to_owned();
    let asset = get(&app, &format!("/stories/{id}/pages/{pid}/assets/image")).await;
    assert_eq!(asset.status, StatusCode::OK);
    assert_eq!(asset.header("x-content-hash"), hash);
    assert_eq!(asset.header("content-type"), "image/x-portable-pixmap");
    assert!(asset.bytes.starts_with(b"P6\n"));

    let cached = call(
        &app,
        Method::GET,
        &format!("/stories/{id}/pages/{pid}/assets/image"),
        None,
        &[("if-none-match", &format!("\"{hash}\""))],
    )
    .await;
    assert_eq!(cached.status, StatusCode::NOT_MODIFIED);
    assert!(cached.bytes.is_empty());

    let text = get(&app, &format!("/stories/{id}/pages/{pid}/assets/narration")).await;
    assert_eq!(text.status, StatusCode::OK);
    assert!(!text.bytes.is_empty());

    for uri in [
        format!("/stories/{id}/pages/p99/assets/image"),
        format!("/stories/{id}/pages/{pid}/assets/sound"),
        "/stories/nope/pages/p1/assets/image".to_owned(),
        "/stories/..%2F/history".to_owned(),
    ] {
        let reply = get(&app, &uri).await;
        assert_eq!(reply.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(reply.json()["code"], "not_found");
    }
}

#[tokio::test]
async fn green_eyes_edit_regenerates_that_characters_pages() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let before = get(&app, &format!("/stories/{id}")).await.json();
    let expected = pages_of_first_character(&before["state"]);

    let reply = post(
        &app,
        &format!("/stories/{id}/edits"),
        json!({"text": "shy boy has green eyes throughout the story"}),
    )
    .await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.header("etag"), "\"r1\"");
    let result = reply.json();
    assert_eq!(string_set(&result["regenerated_image_pages"]), expected);
    assert_eq!(result["revision"], "r1");

    // Hash ground truth: exactly the reported pages changed.
    let after = get(&app, &format!("/stories/{id}")).await.json();
    let changed: BTreeSet<String> = image_hashes(&before["state"])
        .iter()
        .zip(image_hashes(&after["state"]))
        .zip(after["state"]["pages"].as_array().unwrap())
        .filter(|((a, b), _)| *a != b)
        .map(|(_, p)| p["id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(changed, expected);
}

#[tokio::test]
async fn page_scoped_and_structured_edits() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let reply = post(
        &app,
        &format!("/stories/{id}/edits"),
        json!({"text": "on page 3, shy boy should wear a yellow coat"}),
    )
    .await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.json()["regenerated_image_pages"], json!(["p3"]));
    assert_eq!(reply.json()["regenerated_text_pages"], json!([]));

    let reply = post(
        &app,
        &format!("/stories/{id}/edits"),
        json!({"ops": [{"op": "set_scene_description", "page": "p5", "text": "a picnic on the roof"}],
               "note": "scene tweak"}),
    )
    .await;
    assert_eq!(reply.status, StatusCode::OK);
    let result = reply.json();
    assert_eq!(result["regenerated_image_pages"], json!(["p5"]));
    assert_eq!(result["regenerated_text_pages"], json!(["p5"]));

    let reply = post(
        &app,
        &format!("/stories/{id}/edits"),
        json!({"text": "on page 3, shy boy should wear a red coat", "mode": "no-page-regen"}),
    )
    .await;
    assert_eq!(reply.json()["regenerated_image_pages"].as_array().unwrap().len(), 10);

    let history = get(&app, &format!("/stories/{id}/history")).await.json();
    let revisions = history["revisions"].as_array().unwrap();
    assert_eq!(revisions.len(), 4);
    assert!(revisions[1]["dirty"]["image_pages"].is_array());
    assert!(revisions[1].get("state").is_none());
    assert_eq!(history["head"], "r3");
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let edits = format!("/stories/{id}/edits");

    let reply = post(&app, &edits, json!({"text": "Bob has green eyes throughout the story"})).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);
    assert_eq!(reply.json()["code"], "ungrounded_reference");
    assert_eq!(reply.json()["detail"]["surface"], "Bob");

    let reply = post(
        &app,
        &edits,
        json!({"ops": [{"op": "set_scene_description", "page": "p1", "text": "ok"},
                       {"op": "remove_page", "page": "p77"}]}),
    )
    .await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);
    assert_eq!(reply.json()["code"], "edit_rejected");
    assert_eq!(reply.json()["detail"]["op_index"], 1);

    for body in [json!({}), json!({"text": "x", "ops": []}), json!({"text": "x", "mode": "turbo"}), json!({"txt": "x"})] {
        let reply = post(&app, &edits, body.clone()).await;
        assert_eq!(reply.status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(reply.json()["code"], "validation_error");
    }
    let reply = call(&app, Method::POST, &edits, None, &[("content-type", "application/json")]).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);

    let reply = post(&app, &format!("/stories/{id}/revert"), json!({"revision": "r42"})).await;
    assert_eq!(reply.status, StatusCode::NOT_FOUND);
    assert_eq!(reply.json()["code"], "unknown_revision");

    let reply = post(&app, "/stories", json!({"prompt": "", "n_pages": 3})).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);
    let reply = post(&app, "/stories", json!({"prompt": "a fox", "n_pages": 0})).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);

    let reply = post(&app, &format!("/stories/{id}/critic/f9/accept"), json!({})).await;
    assert_eq!(reply.status, StatusCode::NOT_FOUND);

    let reply = get(&app, &format!("/stories/{id}/prompts?format=yaml")).await;
    assert_eq!(reply.status, StatusCode::BAD_REQUEST);

    // Nothing above changed the story.
    assert_eq!(get(&app, &format!("/stories/{id}")).await.json()["head"], "r0");
}

#[tokio::test]
async fn revert_and_if_match() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let original = get(&app, &format!("/stories/{id}")).await.json()["state"].clone();
    let edits = format!("/stories/{id}/edits");
    let body = json!({"text": "shy boy has green eyes throughout the story"});

    let stale = call(&app, Method::POST, &edits, Some(body.clone()), &[("if-match", "\"r5\"")]).await;
    assert_eq!(stale.status, StatusCode::PRECONDITION_FAILED);
    assert_eq!(stale.json()["code"], "precondition_failed");
    assert_eq!(stale.json()["detail"]["head"], "r0");

    let fresh = call(&app, Method::POST, &edits, Some(body), &[("if-match", "\"r0\"")]).await;
    assert_eq!(fresh.status, StatusCode::OK);

    let reply = call(
        &app,
        Method::POST,
        &format!("/stories/{id}/revert"),
        Some(json!({"revision": "r0"})),
        &[("if-match", "\"r1\"")],
    )
    .await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.json()["revision"], "r2");
    let reverted = get(&app, &format!("/stories/{id}")).await.json();
    assert_eq!(reverted["state"], original);
    assert_eq!(reverted["head"], "r2");
}

#[tokio::test]
async fn critic_findings_can_be_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let images = Arc::new(MockImageBackend::new());
    let backends = Backends {
        chat: Arc::new(MockChatBackend::new()),
        text: Arc::new(MockTextBackend::new()),
        image: images.clone(),
    };
    let settings = ServerSettings {
        root: dir.path().to_owned(),
        ..ServerSettings::default()
    };
    let app = router(Arc::new(AppState::new(
        settings,
        backends,
        Arc::new(MockEmbedding::default()),
        EngineMode::full(),
    )));
    let id = create(&app).await;
    let state = get(&app, &format!("/stories/{id}")).await.json()["state"].clone();
    let outfit = state["characters"][0]["attributes"][0]["value"].as_str().unwrap().to_owned();
    images.add_drift(storystate_core::generation::Drift {
        page: Some(storystate_core::ids::PageId::new("p1")),
        from: outfit,
        to: "plain grey clothes".into(),
        remaining: Some(1),
    });
    let reply = post(
        &app,
        &format!("/stories/{id}/edits"),
        json!({"ops": [{"op": "set_scene_description", "page": "p1", "text": "the shy boy waves"}]}),
    )
    .await;
    let result = reply.json();
    assert_eq!(result["findings_remaining"][0]["id"], "f1");
    let story = get(&app, &format!("/stories/{id}")).await.json();
    assert_eq!(story["findings"].as_array().unwrap().len(), 1);

    let reply = post(&app, &format!("/stories/{id}/critic/f1/accept"), json!({})).await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.json()["regenerated_image_pages"], json!(["p1"]));
    let history = get(&app, &format!("/stories/{id}/history")).await.json();
    let head = history["revisions"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(head["origin"], "critic");
    assert!(get(&app, &format!("/stories/{id}")).await.json()["findings"]
        .as_array()
        .unwrap()
        .is_empty());
}

#[tokio::test]
async fn metrics_and_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let metrics = get(&app, &format!("/stories/{id}/metrics")).await.json();
    let mean = metrics["consistency"]["mean"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&mean));
    assert_eq!(metrics["consistency"]["per_adjacent_pair"].as_array().unwrap().len(), 9);
    assert!(metrics["edit_efficiency"].is_null());
    assert!(metrics["edit_efficiency_error"].is_string());

    post(
        &app,
        &format!("/stories/{id}/edits"),
        json!({"text": "on page 3, shy boy should wear a yellow coat"}),
    )
    .await;
    let metrics = get(&app, &format!("/stories/{id}/metrics")).await.json();
    assert_eq!(metrics["edit_efficiency"]["mean_pages_changed"], 1.0);

    let bundle = get(&app, &format!("/stories/{id}/prompts")).await.json();
    assert_eq!(bundle["pages"].as_array().unwrap().len(), 10);
    let text = get(&app, &format!("/stories/{id}/prompts?format=interchange")).await;
    assert_eq!(text.header("content-type"), "text/plain; charset=utf-8");
    assert!(String::from_utf8(text.bytes).unwrap().contains("--frame_prompt_list"));
}

#[tokio::test]
async fn imported_reference_story_exports_byte_equal() {
    let dir = tempfile::tempdir().unwrap();
    let stories = import_dataset(REFERENCE).unwrap();
    let session = ProjectSession::import(dir.path().join("phoenix"), stories[0].state.clone(), "import", 0).unwrap();
    drop(session);
    let app = mock_app(dir.path());
    let reply = get(&app, "/stories/phoenix/prompts?format=interchange").await;
    assert_eq!(reply.status, StatusCode::OK);
    let body = String::from_utf8(reply.bytes).unwrap();
    let source = parse_records(REFERENCE).unwrap();
    assert_eq!(body, export_record(&source[0]));
    let block = REFERENCE.split("\n\n").next().unwrap();
    assert_eq!(body, format!("{block}\n"));
}

#[tokio::test]
async fn backend_failure_is_502_and_leaves_state() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let before = get(&app, &format!("/stories/{id}")).await.json();

    let scripted = ScriptedChatBackend::new();
    scripted.push_error(
        storystate_core::agents::EDIT_REQUEST_SCHEMA,
        BackendError::Unreachable("connection refused".into()),
    );
    let backends = Backends {
        chat: Arc::new(scripted),
        ..Backends::mock()
    };
    let settings = ServerSettings {
        root: dir.path().to_owned(),
        ..ServerSettings::default()
    };
    let down = router(Arc::new(AppState::new(
        settings,
        backends,
        Arc::new(MockEmbedding::default()),
        EngineMode::full(),
    )));
    let reply = post(&down, &format!("/stories/{id}/edits"), json!({"text": "make it rain"})).await;
    assert_eq!(reply.status, StatusCode::BAD_GATEWAY);
    assert_eq!(reply.json()["code"], "backend_error");
    assert_eq!(get(&app, &format!("/stories/{id}")).await.json(), before);
}

#[tokio::test]
async fn locked_project_is_409() {
    let dir = tempfile::tempdir().unwrap();
    let app = mock_app(dir.path());
    let id = create(&app).await;
    let held = Project::open(dir.path().join(&id)).unwrap();
    let reply = post(&app, &format!("/stories/{id}/edits"), json!({"text": "make it rain"})).await;
    assert_eq!(reply.status, StatusCode::CONFLICT);
    assert_eq!(reply.json()["code"], "project_locked");
    // Reads do not need the lock.
    assert_eq!(get(&app, &format!("/stories/{id}")).await.status, StatusCode::OK);
    drop(held);
}

#[tokio::test]
async fn restart_loses_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let app = mock_app(dir.path());
        let id = create(&app).await;
        post(
            &app,
            &format!("/stories/{id}/edits"),
            json!({"text": "shy boy has green eyes throughout the story"}),
        )
        .await;
        let story = get(&app, &format!("/stories/{id}")).await.json();
        (id, story)
    };
    let app = mock_app(dir.path());
    assert_eq!(get(&app, &format!("/stories/{id}")).await.json(), before);
    let history = get(&app, &format!("/stories/{id}/history")).await.json();
    assert_eq!(history["revisions"].as_array().unwrap().len(), 2);
}

/// Narration that takes a while, to hold the story lock.
struct SlowText(MockTextBackend);

impl TextBackend for SlowText {
    fn generate_narration(&self, request: &NarrationRequest) -> Result<String, BackendError> {
        std::thread::sleep(Duration::from_millis(150));
        self.0.generate_narration(request)
    }
}

fn slow_app(root: &std::path::Path, busy_policy: BusyPolicy, async_jobs: bool) -> Router {
    let settings = ServerSettings {
        root: root.to_owned(),
        busy_policy,
        async_jobs,
        ..ServerSettings::default()
    };
    let backends = Backends {
        text: Arc::new(SlowText(MockTextBackend::new())),
        ..Backends::mock()
    };
    router(Arc::new(AppState::new(
        settings,
        backends,
        Arc::new(MockEmbedding::default()),
        EngineMode::full(),
    )))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn busy_story_rejects_or_queues() {
    let dir = tempfile::tempdir().unwrap();
    let id = create(&mock_app(dir.path())).await;
    let edit = json!({"ops": [{"op": "set_scene_description", "page": "p1", "text": "a slow day"}]});
    let uri = format!("/stories/{id}/edits");

    let reject = slow_app(dir.path(), BusyPolicy::Reject, false);
    let (a, b) = tokio::join!(post(&reject, &uri, edit.clone()), async {
        tokio::time::sleep(Duration::from_millis(40)).await;
        post(&reject, &uri, edit.clone()).await
    });
    let mut statuses = [a.status, b.status];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    assert_eq!(b.json()["code"], "story_busy");

    let queue = slow_app(dir.path(), BusyPolicy::Queue, false);
    let (a, b) = tokio::join!(post(&queue, &uri, edit.clone()), async {
        tokio::time::sleep(Duration::from_millis(40)).await;
        post(&queue, &uri, edit.clone()).await
    });
    assert_eq!((a.status, b.status), (StatusCode::OK, StatusCode::OK));
    let heads: BTreeSet<String> = [a.json()["revision"].clone(), b.json()["revision"].clone()]
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect();
    assert_eq!(heads.len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn async_mode_returns_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let app = slow_app(dir.path(), BusyPolicy::Queue, true);
    let reply = post(&app, "/stories", json!({"prompt": SHY_BOY, "n_pages": 2})).await;
    assert_eq!(reply.status, StatusCode::ACCEPTED);
    let url = reply.json()["status_url"].as_str().unwrap().to_owned();
    assert_eq!(reply.header("location"), url);
    let mut job = get(&app, &url).await.json();
    for _ in 0..100 {
        if job["status"] != "pending" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
        job = get(&app, &url).await.json();
    }
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["http_status"], 201);
    assert_eq!(job["result"]["story_id"], "s1");

    let reply = post(&app, "/stories/s1/edits", json!({"text": "Bob has green eyes throughout the story"})).await;
    let url = reply.json()["status_url"].as_str().unwrap().to_owned();
    let mut job = get(&app, &url).await.json();
    for _ in 0..100 {
        if job["status"] != "pending" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
        job = get(&app, &url).await.json();
    }
    assert_eq!(job["status"], "failed");
    assert_eq!(job["http_status"], 400);
    assert_eq!(job["error"]["code"], "ungrounded_reference");
    assert_eq!(get(&app, "/jobs/j99").await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn openapi_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    let settings = ServerSettings {
        root: dir.path().to_owned(),
        cors_origin: Some("http://localhost:5173".into()),
        ..ServerSettings::default()
    };
    let app = router(Arc::new(AppState::new(
        settings,
        Backends::mock(),
        Arc::new(MockEmbedding::default()),
        EngineMode::full(),
    )));
    let doc = get(&app, "/openapi.json").await.json();
    assert_eq!(doc["openapi"], "3.0.3");
    assert!(doc["paths"]["/stories/{id}/critic/{finding_id}/accept"]["post"].is_object());

    let preflight = call(
        &app,
        Method::OPTIONS,
        "/stories",
        None,
        &[
            ("origin", "http://localhost:5173"),
            ("access-control-request-method", "POST"),
            ("access-control-request-headers", "content-type,if-match"),
        ],
    )
    .await;
    assert_eq!(preflight.header("access-control-allow-origin"), "http://localhost:5173");
    let other = call(&app, Method::GET, "/openapi.json", None, &[("origin", "http://evil.example")]).await;
    // The configured origin is announced whatever the caller; browsers enforce it.
    assert_eq!(other.header("access-control-allow-origin"), "http://localhost:5173");
}
