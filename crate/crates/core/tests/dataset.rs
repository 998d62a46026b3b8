use storystate_core::persistence::{generate_dataset, import_dataset, shipped_specs};
use storystate_core::prompt::{compile, parse_records, InterchangeRecord};

const REFERENCE: &str = include_str!("fixtures/reference_records.txt");

#[test]
fn reference_parses_into_five_ten_frame_records() {
    let records = parse_records(REFERENCE).unwrap();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r.frame_prompts.len() == 10));
}

#[test]
fn imported_reference_re_exports_every_prompt_string() {
    let source = parse_records(REFERENCE).unwrap();
    let stories = import_dataset(REFERENCE).unwrap();
    assert_eq!(stories.len(), 5);
    for (story, record) in stories.iter().zip(&source) {
        assert!(story.warnings.is_empty(), "{:?}", story.warnings);
        assert_eq!(story.state.pages.len(), 10);
        let rebuilt = InterchangeRecord::from_bundle(&compile(&story.state).unwrap());
        assert_eq!(&rebuilt, record);
    }
}

#[test]
fn exported_reference_is_byte_identical() {
    let records = parse_records(REFERENCE).unwrap();
    assert_eq!(storystate_core::prompt::export_records(&records), REFERENCE);
    let stories = import_dataset(REFERENCE).unwrap();
    let rebuilt: Vec<_> = stories
        .iter()
        .map(|s| InterchangeRecord::from_bundle(&compile(&s.state).unwrap()))
        .collect();
    assert_eq!(storystate_core::prompt::export_records(&rebuilt), REFERENCE);
}

#[test]
fn shipped_specs_reproduce_reference_records() {
    let source = parse_records(REFERENCE).unwrap();
    let generated = generate_dataset(&shipped_specs(), 42).unwrap();
    assert_eq!(generated.len(), 192);
    assert_eq!(&generated[..5], &source[..]);
}

#[test]
fn generate_import_export_is_a_fixed_point() {
    let generated = generate_dataset(&shipped_specs(), 1).unwrap();
    let text = storystate_core::prompt::export_records(&generated);
    let stories = import_dataset(&text).unwrap();
    for (story, record) in stories.iter().zip(&generated) {
        let rebuilt = InterchangeRecord::from_bundle(&compile(&story.state).unwrap());
        assert_eq!(&rebuilt, record);
    }
}

#[test]
fn malformed_record_reports_its_index() {
    let mut records: Vec<String> = REFERENCE
        .split("\n\n")
        .map(str::to_owned)
        .collect();
    assert_eq!(records.len(), 5);
    records[2] = records[2].replace("--frame_prompt_list", "--frames");
    let err = import_dataset(&records.join("\n\n")).unwrap_err();
    assert_eq!(err.record, Some(3));
}
