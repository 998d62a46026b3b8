//! Fixture stories and random generators shared by unit, property and
//! acceptance tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::edit::{CharacterDraft, DraftConstraint, EditBatch, EditOp, PageDraft, WorldField, WorldValue};
use crate::ids::{CharacterId, IdSequence, PageId, StoryId};
use crate::state::{
    Attribute, CharacterEntry, ConstraintSource, IdentityInvariant, NarrativePhase, PageState,
    PhaseSplit, PromptConfig, StoryState, QUALITY_CLAUSE, VisualConstraint, WorldSettings,
};


/// A small hand-built story with `n` pages.
///
/// * `c1` Lily (yellow raincoat, red braids) is on every page and has one
///   active invariant;
/// * `c2` robot is on even ordinals;
/// * `c3` owl is on ordinals 1, 3 and 5.
pub fn sample_story(n: usize) -> StoryState {
    let mut seq = IdSequence::default();
    let lily = seq.mint_character();
    let robot = seq.mint_character();
    let owl = seq.mint_character();
    let characters = vec![
        CharacterEntry {
            id: lily.clone(),
            name: "Lily".into(),
            role: "protagonist".into(),
            attributes: vec![
                Attribute::new("hair", "red braids"),
                Attribute::new("clothing", "yellow raincoat"),
            ],
            reference_assets: vec![],
            aliases: vec!["the girl".into()],
        },
        CharacterEntry {
            id: robot.clone(),
            name: "robot".into(),
            role: "companion".into(),
            attributes: vec![Attribute::new("body", "rusty silver plating")],
            reference_assets: vec![],
            aliases: vec![],
        },
        CharacterEntry {
            id: owl.clone(),
            name: "owl".into(),
            role: "guide".into(),
            attributes: vec![Attribute::new("feathers", "speckled brown feathers")],
            reference_assets: vec![],
            aliases: vec![],
        },
    ];
    let phases = PhaseSplit::default().phases(n);
    let scenes = [
        "waking up in a cluttered attic",
        "finding a strange machine under a tarp",
        "following a trail of bolts through the garden",
        "sheltering from the rain in a greenhouse",
        "crossing the old footbridge",
        "repairing a broken antenna together",
        "watching the storm clear over the harbor",
        "flying a kite on the hill",
        "sharing tea at dusk",
        "falling asleep by the window",
    ];
    let pages = (0..n)
        .map(|i| {
            let ordinal = i as u32 + 1;
            let mut on_page = vec![lily.clone()];
            if ordinal.is_multiple_of(2) {
                on_page.push(robot.clone());
            }
            if [1, 3, 5].contains(&ordinal) {
                on_page.push(owl.clone());
            }
            let constraints = if ordinal == 2 {
                vec![VisualConstraint {
                    key: "kite_position".into(),
                    description: "the red kite in the upper left".into(),
                    source: ConstraintSource::Planner,
                }]
            } else {
                vec![]
            };
            PageState {
                id: seq.mint_page(),
                ordinal,
                scene_description: scenes[i % scenes.len()].into(),
                characters: on_page,
                constraints,
                narrative_phase: phases[i],
                narration_asset: None,
                image_asset: None,
                failure: None,
            }
        })
        .collect();
    StoryState {
        id: StoryId::new("s-sample"),
        title: "Lily and the robot".into(),
        characters,
        invariants: vec![IdentityInvariant {
            character: lily,
            constraint_text: "always wears a yellow raincoat".into(),
            active: true,
        }],
        world: WorldSettings {
            style: "soft watercolor illustration".into(),
            tone: "gentle".into(),
            recurring_locations: vec!["the old lighthouse".into()],
            recurring_props: vec!["a red kite".into()],
        },
        prompt_config: PromptConfig::default(),
        pages,
        id_sequence: seq,
    }
}

const NAMES: &[&str] = &[
    "Lily", "Tim", "robot", "owl", "fox", "Mara", "dragon", "Pip", "bear", "Odo",
];
const ATTR_KEYS: &[&str] = &["eyes", "hair", "clothing", "fur", "size", "hat"];
const ATTR_VALUES: &[&str] = &[
    "green eyes",
    "blue eyes",
    "curly hair",
    "a yellow coat",
    "a red scarf",
    "silver fur",
    "tiny",
    "a straw hat",
];
const INVARIANTS: &[&str] = &[
    "always wears a yellow raincoat",
    "carries a lantern",
    "has a scar on the left cheek",
    "never takes off the hat",
];
const STYLES: &[&str] = &[
    "soft watercolor illustration",
    "ink drawing",
    "bold comic panel",
    "A gentle pastel painting",
];
const TONES: &[&str] = &["", "gentle", "mysterious", "playful"];
const PLACES: &[&str] = &["the harbor", "the old mill", "a pine forest", "the market"];
const PROPS: &[&str] = &["a red kite", "a brass key", "a map"];
const SCENES: &[&str] = &[
    "walking along the harbor",
    "climbing a hill at dawn",
    "reading under a lamp",
    "hiding from the rain",
    "crossing a rope bridge",
    "building a sandcastle",
    "looking at the stars",
];
const CONSTRAINT_KEYS: &[&str] = &["coat", "tv_position", "lighting", "weather"];
const CONSTRAINT_TEXTS: &[&str] = &[
    "TV on the left",
    "same yellow coat as on page 1",
    "warm evening light",
    "light drizzle",
    "lamp on the right",
];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, pool: &'a [&'a str]) -> &'a str {
    pool.choose(rng).copied().expect("non-empty pool")
}

fn random_scene<R: Rng + ?Sized>(rng: &mut R, names: &[String]) -> String {
    let base = pick(rng, SCENES);
    if !names.is_empty() && rng.random_bool(0.3) {
        let name = names.choose(rng).expect("non-empty");
        format!("{name} {base}")
    } else {
        base.to_owned()
    }
}

fn monotone_phases<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<NarrativePhase> {
    let mut phases: Vec<NarrativePhase> = (0..n)
        .map(|_| *NarrativePhase::ALL.choose(rng).expect("three phases"))
        .collect();
    phases.sort();
    phases
}

/// A random valid story with 1..=`max_pages` pages and 1..=`max_characters`
/// characters.
pub fn random_story<R: Rng + ?Sized>(rng: &mut R, max_pages: usize, max_characters: usize) -> StoryState {
    let mut seq = IdSequence::default();
    let n_chars = rng.random_range(1..=max_characters.min(NAMES.len()));
    let mut names: Vec<&str> = NAMES.to_vec();
    names.shuffle(rng);
    names.truncate(n_chars);
    let characters: Vec<CharacterEntry> = names
        .iter()
        .map(|name| {
            let mut keys: Vec<&str> = ATTR_KEYS.to_vec();
            keys.shuffle(rng);
            let attributes = keys
                .into_iter()
                .take(rng.random_range(0..=3))
                .map(|k| Attribute::new(k, pick(rng, ATTR_VALUES)))
                .collect();
            let aliases = if rng.random_bool(0.3) {
                vec![format!("the little {name}")]
            } else {
                vec![]
            };
            CharacterEntry {
                id: seq.mint_character(),
                name: (*name).to_owned(),
                role: "character".into(),
                attributes,
                reference_assets: vec![],
                aliases,
            }
        })
        .collect();
    let ids: Vec<CharacterId> = characters.iter().map(|c| c.id.clone()).collect();
    let names: Vec<String> = characters.iter().map(|c| c.name.clone()).collect();
    let mut invariants: Vec<IdentityInvariant> = Vec::new();
    for _ in 0..rng.random_range(0..=3) {
        let character = ids.choose(rng).expect("non-empty").clone();
        let text = pick(rng, INVARIANTS).to_owned();
        if !invariants
            .iter()
            .any(|i| i.character == character && i.constraint_text == text)
        {
            invariants.push(IdentityInvariant {
                character,
                constraint_text: text,
                active: rng.random_bool(0.7),
            });
        }
    }
    let n_pages = rng.random_range(1..=max_pages);
    let phases = monotone_phases(rng, n_pages);
    let pages = (0..n_pages)
        .map(|i| {
            let mut on_page: Vec<CharacterId> =
                ids.iter().filter(|_| rng.random_bool(0.45)).cloned().collect();
            on_page.shuffle(rng);
            let mut keys: Vec<&str> = CONSTRAINT_KEYS.to_vec();
            keys.shuffle(rng);
            let mut constraints: Vec<VisualConstraint> = keys
                .into_iter()
                .take(rng.random_range(0..=2))
                .map(|k| VisualConstraint {
                    key: k.into(),
                    description: pick(rng, CONSTRAINT_TEXTS).into(),
                    source: ConstraintSource::Planner,
                })
                .collect();
            constraints.sort_by(|a, b| a.key.cmp(&b.key));
            PageState {
                id: seq.mint_page(),
                ordinal: i as u32 + 1,
                scene_description: random_scene(rng, &names),
                characters: on_page,
                constraints,
                narrative_phase: phases[i],
                narration_asset: None,
                image_asset: None,
                failure: None,
            }
        })
        .collect();
    let sample_list = |rng: &mut R, pool: &[&str]| -> Vec<String> {
        let mut items: Vec<String> = pool.iter().map(|s| (*s).to_owned()).collect();
        items.shuffle(rng);
        items.truncate(rng.random_range(0..=2));
        items
    };
    let world = WorldSettings {
        style: pick(rng, STYLES).into(),
        tone: pick(rng, TONES).into(),
        recurring_locations: sample_list(rng, PLACES),
        recurring_props: sample_list(rng, PROPS),
    };
    StoryState {
        id: StoryId::new("s-random"),
        title: "random story".into(),
        characters,
        invariants,
        world,
        prompt_config: PromptConfig {
            quality_clause: rng.random_bool(0.3).then(|| QUALITY_CLAUSE.to_owned()),
        },
        pages,
        id_sequence: seq,
    }
}

fn random_op<R: Rng + ?Sized>(rng: &mut R, state: &StoryState) -> EditOp {
    let page = |rng: &mut R| -> PageId {
        state
            .pages
            .choose(rng)
            .map(|p| p.id.clone())
            .unwrap_or_else(|| PageId::new("p0"))
    };
    let character = |rng: &mut R| -> CharacterId {
        state
            .characters
            .choose(rng)
            .map(|c| c.id.clone())
            .unwrap_or_else(|| CharacterId::new("c0"))
    };
    let names: Vec<String> = state.characters.iter().map(|c| c.name.clone()).collect();
    match rng.random_range(0..15) {
        0 => EditOp::SetCharacterAttribute {
            character: character(rng),
            key: pick(rng, ATTR_KEYS).into(),
            value: pick(rng, ATTR_VALUES).into(),
        },
        1 => EditOp::AddCharacter {
            entry: CharacterDraft {
                name: format!("newcomer{}", state.id_sequence.next_character),
                role: "extra".into(),
                attributes: vec![Attribute::new("hat", pick(rng, ATTR_VALUES))],
                ..CharacterDraft::default()
            },
        },
        2 => EditOp::RemoveCharacter {
            character: character(rng),
        },
        3 => EditOp::AddIdentityInvariant {
            invariant: IdentityInvariant {
                character: character(rng),
                constraint_text: pick(rng, INVARIANTS).into(),
                active: rng.random_bool(0.6),
            },
        },
        4 => match state.invariants.choose(rng) {
            Some(inv) => EditOp::RemoveIdentityInvariant {
                character: inv.character.clone(),
                constraint_text: inv.constraint_text.clone(),
            },
            None => EditOp::RemoveIdentityInvariant {
                character: character(rng),
                constraint_text: "nothing".into(),
            },
        },
        5 => {
            let field = *[
                WorldField::Style,
                WorldField::Tone,
                WorldField::RecurringLocations,
                WorldField::RecurringProps,
            ]
            .choose(rng)
            .expect("four fields");
            let value = match field {
                WorldField::Style => WorldValue::Text(pick(rng, STYLES).into()),
                WorldField::Tone => WorldValue::Text(pick(rng, TONES).into()),
                WorldField::RecurringLocations => {
                    WorldValue::List(vec![pick(rng, PLACES).into()])
                }
                WorldField::RecurringProps => WorldValue::List(vec![pick(rng, PROPS).into()]),
            };
            EditOp::SetWorldField { field, value }
        }
        6 => EditOp::SetSceneDescription {
            page: page(rng),
            text: random_scene(rng, &names),
        },
        7 | 8 => EditOp::SetPageConstraint {
            page: page(rng),
            key: pick(rng, CONSTRAINT_KEYS).into(),
            description: pick(rng, CONSTRAINT_TEXTS).into(),
        },
        9 => {
            let p = page(rng);
            let key = state
                .page(&p)
                .and_then(|pg| pg.constraints.choose(rng).map(|c| c.key.clone()))
                .unwrap_or_else(|| pick(rng, CONSTRAINT_KEYS).into());
            EditOp::RemovePageConstraint { page: p, key }
        }
        10 => EditOp::AddCharacterToPage {
            page: page(rng),
            character: character(rng),
        },
        11 => {
            let p = page(rng);
            let c = state
                .page(&p)
                .and_then(|pg| pg.characters.choose(rng).cloned())
                .unwrap_or_else(|| character(rng));
            EditOp::RemoveCharacterFromPage { page: p, character: c }
        }
        12 => {
            let after = rng.random_range(0..=state.pages.len() as u32);
            // Pick a phase that keeps the sequence monotone around the slot.
            let ordered = state.pages_in_order();
            let lo = after
                .checked_sub(1)
                .and_then(|i| ordered.get(i as usize))
                .map_or(NarrativePhase::Introduce, |p| p.narrative_phase);
            let characters: Vec<CharacterId> = state
                .characters
                .iter()
                .filter(|_| rng.random_bool(0.4))
                .map(|c| c.id.clone())
                .collect();
            EditOp::AddPage {
                after_ordinal: after,
                page: PageDraft {
                    scene_description: random_scene(rng, &names),
                    characters,
                    constraints: vec![DraftConstraint {
                        key: pick(rng, CONSTRAINT_KEYS).into(),
                        description: pick(rng, CONSTRAINT_TEXTS).into(),
                    }],
                    narrative_phase: lo,
                },
            }
        }
        13 => {
            if rng.random_bool(0.5) {
                EditOp::RemovePage { page: page(rng) }
            } else {
                EditOp::MovePage {
                    page: page(rng),
                    new_ordinal: rng.random_range(1..=state.pages.len().max(1) as u32),
                }
            }
        }
        _ => EditOp::SetNarrativePhase {
            page: page(rng),
            phase: *NarrativePhase::ALL.choose(rng).expect("three phases"),
        },
    }
}

/// A random batch of 1..=3 ops against `state`. Some batches are expected
/// to be rejected (dangling references, broken phase order).
pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, state: &StoryState) -> EditBatch {
    let n = rng.random_range(1..=3);
    let ops = (0..n).map(|_| random_op(rng, state)).collect();
    EditBatch::user(ops)
}

/// A random batch whose ops all touch one page and no character or world
/// field.
pub fn random_single_page_batch<R: Rng + ?Sized>(rng: &mut R, state: &StoryState) -> EditBatch {
    let page = state.pages.choose(rng).expect("story has pages").id.clone();
    let names: Vec<String> = state.characters.iter().map(|c| c.name.clone()).collect();
    let op = match rng.random_range(0..3) {
        0 => EditOp::SetSceneDescription {
            page: page.clone(),
            text: format!("{} again", random_scene(rng, &names)),
        },
        1 => EditOp::SetPageConstraint {
            page: page.clone(),
            key: "lighting_override".into(),
            description: format!("lit by {}", pick(rng, &["moonlight", "candles", "neon"])),
        },
        _ => EditOp::SetPageConstraint {
            page: page.clone(),
            key: "extra_prop".into(),
            description: format!("a {} in the corner", pick(rng, &["vase", "globe", "drum"])),
        },
    };
    EditBatch::user(vec![op])
}
