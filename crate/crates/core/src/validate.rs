use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::state::{surface_key, StoryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptyCharacterName,
    DuplicateCharacterId,
    DuplicateAttributeKey,
    AmbiguousAlias,
    DanglingInvariant,
    EmptyStyle,
    DuplicatePageId,
    DanglingCharacter,
    DuplicatePageCharacter,
    DuplicateConstraintKey,
    EmptyConstraintDescription,
    DuplicateOrdinal,
    OrdinalGap,
    OrdinalOutOfOrder,
    PhaseOrder,
    ReusableId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Ordinal of the offending page, when the violation is page-scoped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub page: Option<u32>,
    /// Offending id (character, page) or value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    fn push(
        &mut self,
        code: ViolationCode,
        page: Option<u32>,
        subject: Option<String>,
        message: String,
    ) {
        self.violations.push(Violation {
            code,
            page,
            subject,
            message,
        });
    }
}

pub(crate) fn validate(state: &StoryState) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_characters(state, &mut report);
    check_world(state, &mut report);
    check_pages(state, &mut report);
    check_ordinals(state, &mut report);
    report
}

fn check_characters(state: &StoryState, report: &mut ValidationReport) {
    use ViolationCode::*;
    let mut seen_ids = HashSet::new();
    // surface key -> owning character ids
    let mut surfaces: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in &state.characters {
        if !seen_ids.insert(&c.id) {
            report.push(
                DuplicateCharacterId,
                None,
                Some(c.id.to_string()),
                format!("character id {} appears twice", c.id),
            );
        }
        if !state.id_sequence.covers_character(&c.id) {
            report.push(
                ReusableId,
                None,
                Some(c.id.to_string()),
                format!("id counter would mint {} again", c.id),
            );
        }
        if c.name.trim().is_empty() {
            report.push(
                EmptyCharacterName,
                None,
                Some(c.id.to_string()),
                "character name is empty".into(),
            );
        }
        let mut keys = HashSet::new();
        for attr in &c.attributes {
            if !keys.insert(attr.key.as_str()) {
                report.push(
                    DuplicateAttributeKey,
                    None,
                    Some(c.id.to_string()),
                    format!("attribute key {:?} repeated on {}", attr.key, c.id),
                );
            }
        }
        let mut own = HashSet::new();
        for surface in std::iter::once(&c.name).chain(c.aliases.iter()) {
            let key = surface_key(surface);
            if !key.is_empty() && own.insert(key.clone()) {
                surfaces.entry(key).or_default().push(c.id.to_string());
            }
        }
    }
    for (surface, owners) in surfaces {
        if owners.len() > 1 {
            report.push(
                AmbiguousAlias,
                None,
                Some(surface.clone()),
                format!("surface {surface:?} maps to {}", owners.join(", ")),
            );
        }
    }
    for inv in &state.invariants {
        if state.character(&inv.character).is_none() {
            report.push(
                DanglingInvariant,
                None,
                Some(inv.character.to_string()),
                format!("identity invariant refers to unknown {}", inv.character),
            );
        }
    }
}

fn check_world(state: &StoryState, report: &mut ValidationReport) {
    if state.world.style.trim().is_empty() {
        report.push(
            ViolationCode::EmptyStyle,
            None,
            None,
            "world style is empty".into(),
        );
    }
}

fn check_pages(state: &StoryState, report: &mut ValidationReport) {
    use ViolationCode::*;
    let mut seen_ids = HashSet::new();
    for page in &state.pages {
        let ordinal = Some(page.ordinal);
        if !seen_ids.insert(&page.id) {
            report.push(
                DuplicatePageId,
                ordinal,
                Some(page.id.to_string()),
                format!("page id {} appears twice", page.id),
            );
        }
        if !state.id_sequence.covers_page(&page.id) {
            report.push(
                ReusableId,
                ordinal,
                Some(page.id.to_string()),
                format!("id counter would mint {} again", page.id),
            );
        }
        let mut seen = HashSet::new();
        for c in &page.characters {
            if !seen.insert(c) {
                report.push(
                    DuplicatePageCharacter,
                    ordinal,
                    Some(c.to_string()),
                    format!("page {} lists {c} twice", page.ordinal),
                );
            }
            if state.character(c).is_none() {
                report.push(
                    DanglingCharacter,
                    ordinal,
                    Some(c.to_string()),
                    format!("page {} references unknown {c}", page.ordinal),
                );
            }
        }
        let mut keys = HashSet::new();
        for constraint in &page.constraints {
            if !keys.insert(constraint.key.as_str()) {
                report.push(
                    DuplicateConstraintKey,
                    ordinal,
                    Some(constraint.key.clone()),
                    format!("constraint key {:?} repeated", constraint.key),
                );
            }
            if constraint.description.trim().is_empty() {
                report.push(
                    EmptyConstraintDescription,
                    ordinal,
                    Some(constraint.key.clone()),
                    format!("constraint {:?} has no description", constraint.key),
                );
            }
        }
    }
    let ordered = state.pages_in_order();
    for pair in ordered.windows(2) {
        if pair[1].narrative_phase < pair[0].narrative_phase {
            report.push(
                PhaseOrder,
                Some(pair[1].ordinal),
                Some(pair[1].id.to_string()),
                format!(
                    "phase {} follows {}",
                    pair[1].narrative_phase.as_str(),
                    pair[0].narrative_phase.as_str()
                ),
            );
        }
    }
}

fn check_ordinals(state: &StoryState, report: &mut ValidationReport) {
    use ViolationCode::*;
    let n = state.pages.len() as u32;
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for page in &state.pages {
        *counts.entry(page.ordinal).or_default() += 1;
    }
    for ordinal in 1..=n {
        match counts.get(&ordinal).copied().unwrap_or(0) {
            0 => report.push(
                OrdinalGap,
                Some(ordinal),
                None,
                format!("no page has ordinal {ordinal}"),
            ),
            1 => {}
            k => report.push(
                DuplicateOrdinal,
                Some(ordinal),
                None,
                format!("{k} pages share ordinal {ordinal}"),
            ),
        }
    }
    for page in state.pages.iter().filter(|p| p.ordinal == 0 || p.ordinal > n) {
        report.push(
            OrdinalGap,
            Some(page.ordinal),
            Some(page.id.to_string()),
            format!("ordinal {} lies outside 1..={n}", page.ordinal),
        );
    }
    for pair in state.pages.windows(2) {
        if pair[1].ordinal < pair[0].ordinal {
            report.push(
                OrdinalOutOfOrder,
                Some(pair[1].ordinal),
                Some(pair[1].id.to_string()),
                "page list is not sorted by ordinal".into(),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::CharacterId;
    use crate::testkit::sample_story;

    #[test]
    fn well_formed_story_is_valid() {
        let state = sample_story(10);
        let report = state.validate();
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn dangling_character_reported_with_page() {
        let mut state = sample_story(10);
        let removed = state.pages[2].characters[0].clone();
        state.characters.retain(|c| c.id != removed);
        state.invariants.retain(|i| i.character != removed);
        let report = state.validate();
        let dangling: Vec<&Violation> = report
            .violations
            .iter()
            .filter(|v| v.page == Some(3))
            .collect::<Vec<_>>();
        assert_eq!(dangling.len(), 1);
        assert_eq!(dangling[0].code, ViolationCode::DanglingCharacter);
        assert_eq!(dangling[0].subject.as_deref(), Some(removed.as_str()));
    }

    /// Brute-force oracle: count each value of 1..=N in the ordinal multiset.
    fn ordinal_oracle(ordinals: &[u32]) -> (usize, usize) {
        let n = ordinals.len() as u32;
        let mut dup = 0;
        let mut gap = 0;
        for v in 1..=n {
            match ordinals.iter().filter(|&&o| o == v).count() {
                0 => gap += 1,
                1 => {}
                _ => dup += 1,
            }
        }
        gap += ordinals.iter().filter(|&&o| o == 0 || o > n).count();
        (dup, gap)
    }

    #[test]
    fn ordinal_duplicate_and_gap() {
        let mut state = sample_story(4);
        for (page, ordinal) in state.pages.iter_mut().zip([1, 2, 2, 4]) {
            page.ordinal = ordinal;
        }
        let report = state.validate();
        let (dup, gap) = ordinal_oracle(&[1, 2, 2, 4]);
        assert_eq!((dup, gap), (1, 1));
        assert_eq!(report.violations.len(), 2, "{report:?}");
        assert_eq!(
            report.codes(),
            vec![ViolationCode::DuplicateOrdinal, ViolationCode::OrdinalGap]
        );
    }

    #[test]
    fn ordinal_report_matches_oracle_on_small_multisets() {
        // Every multiset over {1..5} of length 4 in non-decreasing order.
        let mut cases = Vec::new();
        for a in 1..=5u32 {
            for b in a..=5 {
                for c in b..=5 {
                    for d in c..=5 {
                        cases.push([a, b, c, d]);
                    }
                }
            }
        }
        for ordinals in cases {
            let mut state = sample_story(4);
            for (page, ordinal) in state.pages.iter_mut().zip(ordinals) {
                page.ordinal = ordinal;
            }
            // Keep phases flat so only ordinal checks can fire.
            for page in &mut state.pages {
                page.narrative_phase = crate::state::NarrativePhase::Develop;
            }
            let report = state.validate();
            let dup = report
                .codes()
                .iter()
                .filter(|c| **c == ViolationCode::DuplicateOrdinal)
                .count();
            let gap = report
                .codes()
                .iter()
                .filter(|c| **c == ViolationCode::OrdinalGap)
                .count();
            assert_eq!((dup, gap), ordinal_oracle(&ordinals), "{ordinals:?}");
        }
    }

    #[test]
    fn phase_regression_is_flagged() {
        let mut state = sample_story(5);
        state.pages[4].narrative_phase = crate::state::NarrativePhase::Introduce;
        assert!(state.validate().codes().contains(&ViolationCode::PhaseOrder));
    }

    #[test]
    fn shared_alias_and_dangling_invariant() {
        let mut state = sample_story(3);
        let other = state.characters[1].name.clone();
        state.characters[0].aliases.push(other);
        state.invariants.push(crate::state::IdentityInvariant {
            character: CharacterId::new("c42"),
            constraint_text: "glows".into(),
            active: true,
        });
        let codes = state.validate().codes();
        assert!(codes.contains(&ViolationCode::AmbiguousAlias));
        assert!(codes.contains(&ViolationCode::DanglingInvariant));
    }
}
