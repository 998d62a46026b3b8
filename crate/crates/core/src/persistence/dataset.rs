//! Template-based dataset generation and import of interchange records.
//!
//! A generated record for subject `phoenix` with attributes `bright orange
//! feathers` and style prefix `A fiery and majestic illustration`:
//!
//! ```text
//! --id_prompt "A fiery and majestic illustration of A phoenix with bright orange feathers."
//! --frame_prompt_list
//!   "a phoenix with bright orange feathers, <action>, <phase clause>, <quality clause>"
//! ```
//!
//! Actions cycle (`action[(i - 1) mod len]`) and phases follow the default
//! introduce/develop/resolve split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{IdSequence, StoryId};
use crate::persistence::PersistenceError;
use crate::prompt::{
    compile, export_record, indefinite_article, parse_records, starts_with_article, style_head,
    subject_phrase, InterchangeRecord, ParseError,
};
use crate::state::{
    strip_article, Attribute, CharacterEntry, NarrativePhase, PageState, PhaseSplit, PromptConfig,
    StoryState, WorldSettings, QUALITY_CLAUSE,
};

pub const SHIPPED_SPECS_JSON: &str = include_str!("../../data/dataset_specs.json");

const MIN_ACTIONS: usize = 5;

fn default_pages() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub subject: String,
    pub subject_attributes: String,
    pub style_prefix: String,
    pub actions: Vec<String>,
    #[serde(default = "default_pages")]
    pub n_pages: usize,
    /// Shuffle the action list with the dataset seed before cycling.
    #[serde(default)]
    pub shuffle_actions: bool,
}

impl DatasetSpec {
    fn check(&self) -> Result<(), String> {
        if self.subject.trim().is_empty() {
            return Err("subject is empty".into());
        }
        if self.style_prefix.trim().is_empty() {
            return Err("style_prefix is empty".into());
        }
        if self.actions.len() < MIN_ACTIONS {
            return Err(format!("needs at least {MIN_ACTIONS} actions, got {}", self.actions.len()));
        }
        if self.actions.iter().any(|a| a.trim().is_empty()) {
            return Err("empty action".into());
        }
        if self.n_pages == 0 {
            return Err("n_pages must be at least 1".into());
        }
        Ok(())
    }

    fn subject_with_attributes(&self) -> String {
        let subject = self.subject.trim();
        let mut phrase = format!("{} {subject}", indefinite_article(subject));
        if !self.subject_attributes.trim().is_empty() {
            phrase.push_str(" with ");
            phrase.push_str(self.subject_attributes.trim());
        }
        phrase
    }
}

/// The 192 specs shipped with the crate.
pub fn shipped_specs() -> Vec<DatasetSpec> {
    serde_json::from_str(SHIPPED_SPECS_JSON).expect("shipped dataset specs parse")
}

pub fn generate_dataset(
    specs: &[DatasetSpec],
    seed: u64,
) -> Result<Vec<InterchangeRecord>, PersistenceError> {
    specs
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            spec.check().map_err(|message| PersistenceError::InvalidSpec {
                index: index + 1,
                message,
            })?;
            Ok(generate_record(spec, seed.wrapping_add(index as u64)))
        })
        .collect()
}

fn generate_record(spec: &DatasetSpec, seed: u64) -> InterchangeRecord {
    let mut actions = spec.actions.clone();
    if spec.shuffle_actions {
        actions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let subject = spec.subject_with_attributes();
    let lower_subject = lowercase_first(&subject);
    let frames = PhaseSplit::default()
        .phases(spec.n_pages)
        .into_iter()
        .enumerate()
        .map(|(i, phase)| {
            format!(
                "{lower_subject}, {}, {}, {QUALITY_CLAUSE}",
                actions[i % actions.len()],
                phase.clause()
            )
        })
        .collect();
    InterchangeRecord {
        id_prompt: format!("{} of {subject}.", spec.style_prefix.trim()),
        frame_prompts: frames,
    }
}

fn lowercase_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedStory {
    pub state: StoryState,
    /// Grammar mismatches and round-trip losses; empty for well-formed input.
    pub warnings: Vec<String>,
}

/// Imports every record of a multi-record interchange text.
pub fn import_dataset(text: &str) -> Result<Vec<ImportedStory>, ParseError> {
    Ok(parse_records(text)?
        .iter()
        .enumerate()
        .map(|(i, r)| import_record(r, i + 1))
        .collect())
}

/// Builds a one-character story from a record. `index` is 1-based and only
/// used for ids and warnings.
pub fn import_record(record: &InterchangeRecord, index: usize) -> ImportedStory {
    let mut warnings = Vec::new();
    let (style, name, attributes) = split_identity(&record.id_prompt, index, &mut warnings);

    let mut seq = IdSequence::default();
    let character = seq.mint_character();
    let split = PhaseSplit::default().phases(record.frame_prompts.len());
    let mut quality: Option<String> = None;
    let mut quality_consistent = true;
    let mut parsed: Vec<(String, Option<NarrativePhase>)> = Vec::new();
    for (i, frame) in record.frame_prompts.iter().enumerate() {
        match split_frame(frame) {
            Some((scene, phase, q)) => {
                if i == 0 {
                    quality = q;
                } else if quality != q {
                    quality_consistent = false;
                }
                parsed.push((scene, Some(phase)));
            }
            None => {
                warnings.push(format!(
                    "record {index}, frame {}: no phase clause found",
                    i + 1
                ));
                parsed.push((frame.clone(), None));
            }
        }
    }
    if !quality_consistent {
        warnings.push(format!(
            "record {index}: frames disagree on the trailing quality clause"
        ));
    }
    let mut phases: Vec<NarrativePhase> = parsed
        .iter()
        .zip(&split)
        .map(|((_, p), d)| p.unwrap_or(*d))
        .collect();
    if phases.windows(2).any(|w| w[1] < w[0]) {
        warnings.push(format!(
            "record {index}: phases are not monotone, using the default split"
        ));
        phases = split;
    }
    let pages = parsed
        .into_iter()
        .zip(phases)
        .enumerate()
        .map(|(i, ((scene, _), phase))| PageState {
            id: seq.mint_page(),
            ordinal: i as u32 + 1,
            scene_description: scene,
            characters: vec![character.clone()],
            constraints: vec![],
            narrative_phase: phase,
            narration_asset: None,
            image_asset: None,
            failure: None,
        })
        .collect();
    let title = subject_phrase(&name);
    let state = StoryState {
        id: StoryId::new(format!("imported-{index}")),
        title,
        characters: vec![CharacterEntry {
            id: character,
            name,
            role: "protagonist".into(),
            attributes,
            reference_assets: vec![],
            aliases: vec![],
        }],
        invariants: vec![],
        world: WorldSettings {
            style,
            ..WorldSettings::default()
        },
        prompt_config: PromptConfig {
            quality_clause: quality,
        },
        pages,
        id_sequence: seq,
    };
    if let Ok(bundle) = compile(&state) {
        let rebuilt = InterchangeRecord::from_bundle(&bundle);
        if export_record(&rebuilt) != export_record(record) {
            warnings.push(format!("record {index}: re-export differs from the source"));
        }
    }
    ImportedStory { state, warnings }
}

/// `"<style> of <Article> <noun> with <attributes>."` → (style, name, attributes).
fn split_identity(
    id_prompt: &str,
    index: usize,
    warnings: &mut Vec<String>,
) -> (String, String, Vec<Attribute>) {
    let body = id_prompt.trim().strip_suffix('.').unwrap_or(id_prompt.trim());
    let split = body.match_indices(" of ").find_map(|(at, sep)| {
        let rest = &body[at + sep.len()..];
        starts_with_article(rest).then(|| (&body[..at], rest))
    });
    let Some((head, subject)) = split else {
        warnings.push(format!(
            "record {index}: identity prompt does not match \"<style> of <article> <subject>\""
        ));
        return (body.to_owned(), body.to_owned(), vec![]);
    };
    let style = match head.split_once(' ') {
        Some((_, rest)) if starts_with_article(head) && style_head(rest) == head => rest.to_owned(),
        _ => head.to_owned(),
    };
    let (noun_phrase, attrs) = match subject.split_once(" with ") {
        Some((noun, attrs)) => (noun, Some(attrs)),
        None => (subject, None),
    };
    let bare = strip_article(noun_phrase);
    let name = if subject_phrase(bare) == noun_phrase {
        bare.to_owned()
    } else {
        noun_phrase.to_owned()
    };
    let attributes = attrs
        .map(|a| vec![Attribute::new("appearance", a)])
        .unwrap_or_default();
    (style, name, attributes)
}

/// `"<scene>, <phase clause>[, <quality>]"` → parts, using the last phase
/// clause occurrence.
fn split_frame(frame: &str) -> Option<(String, NarrativePhase, Option<String>)> {
    NarrativePhase::ALL
        .iter()
        .filter_map(|phase| {
            let needle = format!(", {}", phase.clause());
            frame.rfind(&needle).and_then(|at| {
                let rest = &frame[at + needle.len()..];
                let quality = if rest.is_empty() {
                    None
                } else {
                    Some(rest.strip_prefix(", ")?.to_owned())
                };
                Some((at, *phase, quality))
            })
        })
        .max_by_key(|(at, _, _)| *at)
        .map(|(at, phase, quality)| (frame[..at].to_owned(), phase, quality))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::export_interchange;

    #[test]
    fn shipped_specs_are_valid_and_distinct() {
        let specs = shipped_specs();
        assert_eq!(specs.len(), 192);
        let records = generate_dataset(&specs, 0).unwrap();
        let ids: std::collections::BTreeSet<_> = records.iter().map(|r| &r.id_prompt).collect();
        assert_eq!(ids.len(), 192);
    }

    #[test]
    fn short_action_list_is_rejected() {
        let mut spec = shipped_specs().remove(0);
        spec.actions.truncate(4);
        assert!(matches!(
            generate_dataset(&[spec], 0),
            Err(PersistenceError::InvalidSpec { index: 1, .. })
        ));
    }

    #[test]
    fn generated_records_import_without_warnings() {
        let records = generate_dataset(&shipped_specs()[..20], 7).unwrap();
        for (i, record) in records.iter().enumerate() {
            let imported = import_record(record, i + 1);
            assert!(imported.warnings.is_empty(), "{:?}", imported.warnings);
            let bundle = compile(&imported.state).unwrap();
            assert_eq!(export_interchange(&bundle), export_record(record));
        }
    }

    #[test]
    fn nonconforming_record_imports_with_warning() {
        let record = InterchangeRecord {
            id_prompt: "Fira, a girl in a red hood".into(),
            frame_prompts: vec!["Fira walks through the woods".into()],
        };
        let imported = import_record(&record, 1);
        assert!(!imported.warnings.is_empty());
        assert!(imported.state.validate().is_valid());
        assert_eq!(imported.state.characters[0].name, "Fira, a girl in a red hood");
    }

    #[test]
    fn shuffle_is_seeded_and_optional() {
        let mut spec = shipped_specs().remove(0);
        let plain_a = generate_dataset(std::slice::from_ref(&spec), 1).unwrap();
        let plain_b = generate_dataset(std::slice::from_ref(&spec), 2).unwrap();
        assert_eq!(plain_a, plain_b);
        spec.shuffle_actions = true;
        let a = generate_dataset(std::slice::from_ref(&spec), 3).unwrap();
        let b = generate_dataset(std::slice::from_ref(&spec), 3).unwrap();
        assert_eq!(a, b);
    }
}
