use serde_json::json;
use storystate_core::agents::{
    build_state, critique, parse_edit_request, plan, AgentError, BackendError, ChatBackend,
    FindingKind, MockChatBackend, PageAssets, ScriptedChatBackend, COREFERENCE_SCHEMA,
    CRITIC_SCHEMA, EDIT_REQUEST_SCHEMA, PLANNER_SCHEMA,
};
use storystate_core::canonical::canonical_json;
use storystate_core::edit::{EditOp, Origin};
use storystate_core::generation::{render_mock_image, MOCK_IMAGE_MEDIA_TYPE};
use storystate_core::ids::{RevisionId, StoryId};
use storystate_core::prompt::compile_page;
use storystate_core::state::{AssetKind, AssetRef, NarrativePhase, PhaseSplit, StoryState};
use storystate_core::testkit::sample_story;

const SHY_BOY: &str = "a shy boy finds a lost robot in the city";

fn phases(out: &storystate_core::agents::PlannerOutput) -> Vec<NarrativePhase> {
    out.pages.iter().map(|p| p.narrative_phase).collect()
}

#[test]
fn planner_follows_default_split() {
    let mock = MockChatBackend::new();
    let out = plan(&mock, SHY_BOY, 10, &PhaseSplit::default()).unwrap();
    assert_eq!(out.pages.len(), 10);
    let counts = |ph| phases(&out).iter().filter(|p| **p == ph).count();
    assert_eq!(
        (
            counts(NarrativePhase::Introduce),
            counts(NarrativePhase::Develop),
            counts(NarrativePhase::Resolve)
        ),
        (2, 4, 4)
    );
    let one = plan(&mock, SHY_BOY, 1, &PhaseSplit::default()).unwrap();
    assert_eq!(phases(&one), vec![NarrativePhase::Introduce]);
}

#[test]
fn mock_pipeline_is_byte_stable() {
    let run = || {
        let mock = MockChatBackend::new();
        let out = plan(&mock, SHY_BOY, 10, &PhaseSplit::default()).unwrap();
        let state = build_state(&out, &mock, StoryId::new("s")).unwrap();
        let batch = parse_edit_request(&mock, &state, "shy boy has green eyes throughout the story").unwrap();
        (
            canonical_json(&out).unwrap(),
            canonical_json(&state).unwrap(),
            canonical_json(&batch).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn mock_story_has_two_characters() {
    let mock = MockChatBackend::new();
    let out = plan(&mock, SHY_BOY, 10, &PhaseSplit::default()).unwrap();
    let state = build_state(&out, &mock, StoryId::new("s")).unwrap();
    let names: Vec<&str> = state.characters.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, vec!["shy boy", "lost robot"]);
    assert_eq!(state.world.recurring_locations, vec!["the city"]);
    assert!(state.validate().is_valid());
    // Every page surface resolves to one entry.
    for (planned, page) in out.pages.iter().zip(&state.pages) {
        assert_eq!(planned.character_surfaces.len(), page.characters.len());
    }
}

fn outline(surfaces: &[&str]) -> serde_json::Value {
    json!({
        "pages": [{
            "scene_description": "a walk in the park",
            "character_surfaces": surfaces,
            "narrative_phase": "introduce",
        }],
        "character_candidates": [],
    })
}

#[test]
fn coreference_clusters_into_named_entry() {
    let scripted = ScriptedChatBackend::new();
    scripted.push(
        COREFERENCE_SCHEMA,
        json!({"clusters": [{"canonical": "Tim", "surfaces": ["a boy", "Tim", "the child"]}]}).to_string(),
    );
    let out = serde_json::from_value(outline(&["a boy", "Tim", "the child"])).unwrap();
    let state = build_state(&out, &scripted, StoryId::new("s")).unwrap();
    assert_eq!(state.characters.len(), 1);
    let tim = &state.characters[0];
    assert_eq!(tim.name, "Tim");
    assert_eq!(tim.aliases, vec!["a boy", "the child"]);
    assert_eq!(state.pages[0].characters, vec![tim.id.clone()]);
}

#[test]
fn single_surface_needs_no_coreference_call() {
    let scripted = ScriptedChatBackend::new();
    let out = serde_json::from_value(outline(&["the fox"])).unwrap();
    let state = build_state(&out, &scripted, StoryId::new("s")).unwrap();
    assert_eq!(state.characters.len(), 1);
    assert_eq!(state.characters[0].name, "fox");
    assert!(scripted.requests().is_empty());
}

#[test]
fn distinct_characters_get_no_aliases() {
    let mock = MockChatBackend::new();
    let out = serde_json::from_value(outline(&["the fox", "the hen"])).unwrap();
    let state = build_state(&out, &mock, StoryId::new("s")).unwrap();
    assert_eq!(state.characters.len(), 2);
    assert!(state.characters.iter().all(|c| c.aliases == vec![format!("the {}", c.name)]
        || c.aliases.is_empty()));
}

#[test]
fn planner_retries_then_fails_with_raw_text() {
    let scripted = ScriptedChatBackend::new();
    scripted.push(PLANNER_SCHEMA, "not json at all");
    scripted.push(PLANNER_SCHEMA, outline(&["a fox"]).to_string());
    let out = plan(&scripted, "a fox", 1, &PhaseSplit::default()).unwrap();
    assert_eq!(out.pages.len(), 1);
    let requests = scripted.requests();
    assert_eq!(requests.len(), 2);
    assert!(requests[1].user_text.contains("Your previous reply was rejected"));

    let scripted = ScriptedChatBackend::new();
    for _ in 0..3 {
        scripted.push(PLANNER_SCHEMA, outline(&["a fox"]).to_string());
    }
    match plan(&scripted, "a fox", 2, &PhaseSplit::default()) {
        Err(AgentError::MalformedAgentOutput { attempts, raw, message, .. }) => {
            assert_eq!(attempts, 3);
            assert!(raw.contains("a walk in the park"));
            assert!(message.contains("exactly 2 pages"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn backend_errors_propagate() {
    let scripted = ScriptedChatBackend::new();
    scripted.push_error(PLANNER_SCHEMA, BackendError::Unreachable("down".into()));
    assert!(matches!(
        plan(&scripted, "a fox", 1, &PhaseSplit::default()),
        Err(AgentError::Backend(BackendError::Unreachable(_)))
    ));
}

#[test]
fn page_three_request_yields_two_constraints() {
    let state = sample_story(10);
    let batch = parse_edit_request(
        &MockChatBackend::new(),
        &state,
        "on page 3, Lily should wear the same yellow coat as on page 1, and the TV should be on the left",
    )
    .unwrap();
    let p3 = state.page_by_ordinal(3).unwrap().id.clone();
    assert_eq!(batch.origin, Origin::User);
    assert_eq!(batch.ops.len(), 2);
    for op in &batch.ops {
        match op {
            EditOp::SetPageConstraint { page, .. } => assert_eq!(page, &p3),
            other => panic!("unexpected op {other:?}"),
        }
    }
}

#[test]
fn global_attribute_request() {
    let state = sample_story(10);
    let batch = parse_edit_request(&MockChatBackend::new(), &state, "Lily has green eyes throughout the story").unwrap();
    assert_eq!(
        batch.ops,
        vec![EditOp::SetCharacterAttribute {
            character: state.characters[0].id.clone(),
            key: "eyes".into(),
            value: "green".into(),
        }]
    );
}

#[test]
fn unknown_name_is_ungrounded() {
    let state = sample_story(10);
    let err = parse_edit_request(&MockChatBackend::new(), &state, "Bob has green eyes throughout the story").unwrap_err();
    assert_eq!(err, AgentError::UngroundedReference { surface: "Bob".into() });
    let err = parse_edit_request(&MockChatBackend::new(), &state, "on page 42, Lily should wear a hat").unwrap_err();
    assert_eq!(err, AgentError::UngroundedReference { surface: "page 42".into() });
}

#[test]
fn unresolved_list_is_fatal_without_retry() {
    let state = sample_story(3);
    let scripted = ScriptedChatBackend::new();
    scripted.push(EDIT_REQUEST_SCHEMA, json!({"ops": [], "unresolved": ["the dragon"]}).to_string());
    let err = parse_edit_request(&scripted, &state, "the dragon flies away").unwrap_err();
    assert_eq!(err, AgentError::UngroundedReference { surface: "the dragon".into() });
    assert_eq!(scripted.requests().len(), 1);
}

#[test]
fn rejected_ops_are_reprompted() {
    let state = sample_story(3);
    let scripted = ScriptedChatBackend::new();
    // Empty value is rejected by the edit engine's dry run.
    scripted.push(
        EDIT_REQUEST_SCHEMA,
        json!({"ops": [{"op": "set_character_attribute", "character": "Lily", "key": "eyes", "value": " "}]}).to_string(),
    );
    scripted.push(
        EDIT_REQUEST_SCHEMA,
        json!({"ops": [{"op": "set_character_attribute", "character": "Lily", "key": "eyes", "value": "green"}]}).to_string(),
    );
    let batch = parse_edit_request(&scripted, &state, "Lily has green eyes").unwrap();
    assert_eq!(batch.ops.len(), 1);
    assert!(scripted.requests()[1].user_text.contains("edit engine rejects"));
}

fn assets_for(state: &StoryState, ordinal: u32, drift: Option<(&str, &str)>) -> PageAssets {
    let page = state.page_by_ordinal(ordinal).unwrap();
    let mut prompt = compile_page(state, &page.id).unwrap().effective_text();
    if let Some((from, to)) = drift {
        prompt = prompt.replace(from, to);
    }
    let bytes = render_mock_image(1, &page.id, &prompt);
    let asset = |kind| AssetRef {
        kind,
        uri: "assets/x".into(),
        content_hash: "x".into(),
        revision: RevisionId::from_index(0),
    };
    PageAssets {
        narration: asset(AssetKind::NarrationText),
        narration_text: "narration".into(),
        image: asset(AssetKind::PageImage),
        image_bytes: bytes,
        image_media_type: MOCK_IMAGE_MEDIA_TYPE.into(),
    }
}

#[test]
fn mock_critic_passes_consistent_page() {
    let state = sample_story(5);
    let page = state.page_by_ordinal(2).unwrap().id.clone();
    let report = critique(&MockChatBackend::new(), &state, &page, &assets_for(&state, 2, None)).unwrap();
    assert!(report.pass);
    assert!(report.findings.is_empty());
}

#[test]
fn mock_critic_flags_planted_mismatch() {
    let state = sample_story(5);
    let page = state.page_by_ordinal(2).unwrap().id.clone();
    let assets = assets_for(&state, 2, Some(("yellow raincoat", "red raincoat")));
    let report = critique(&MockChatBackend::new(), &state, &page, &assets).unwrap();
    assert!(!report.pass);
    assert_eq!(report.findings.len(), 1);
    let finding = &report.findings[0];
    assert_eq!(finding.kind, FindingKind::AttributeMismatch);
    assert_eq!(finding.proposed_fix.origin, Origin::Critic);
    match &finding.proposed_fix.ops[..] {
        [EditOp::SetPageConstraint { page: p, description, .. }] => {
            assert_eq!(p, &page);
            assert_eq!(description, "Lily with yellow raincoat");
        }
        other => panic!("unexpected fix {other:?}"),
    }
}

#[test]
fn critic_fix_outside_page_is_rejected() {
    let state = sample_story(5);
    let page = state.page_by_ordinal(2).unwrap().id.clone();
    let scripted = ScriptedChatBackend::new().with_max_retries(0).with_images(true);
    scripted.push(
        CRITIC_SCHEMA,
        json!({"findings": [{"kind": "missing_element", "detail": "kite missing",
            "proposed_fix": [{"op": "set_page_constraint", "page": 4, "key": "k", "description": "a kite"}]}]})
        .to_string(),
    );
    let err = critique(&scripted, &state, &page, &assets_for(&state, 2, None)).unwrap_err();
    assert!(matches!(err, AgentError::MalformedAgentOutput { .. }));

    let scripted = ScriptedChatBackend::new().with_max_retries(0).with_images(true);
    scripted.push(
        CRITIC_SCHEMA,
        json!({"findings": [{"kind": "missing_element", "detail": "kite missing",
            "proposed_fix": [{"op": "remove_page_constraint", "page": 2, "key": "no_such_key"}]}]})
        .to_string(),
    );
    let err = critique(&scripted, &state, &page, &assets_for(&state, 2, None)).unwrap_err();
    match err {
        AgentError::MalformedAgentOutput { message, .. } => assert!(message.contains("not applicable")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn text_only_critic_is_degraded() {
    let state = sample_story(5);
    let page = state.page_by_ordinal(2).unwrap().id.clone();
    let scripted = ScriptedChatBackend::new();
    scripted.push(CRITIC_SCHEMA, json!({"findings": []}).to_string());
    let report = critique(&scripted, &state, &page, &assets_for(&state, 2, None)).unwrap();
    assert!(report.degraded && report.pass);
    let request = &scripted.requests()[0];
    assert!(request.attachments.is_empty());
    assert!(request.user_text.contains("image_description"));
    assert!(!MockChatBackend::new().config().endpoint.is_empty());
}
