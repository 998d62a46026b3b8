use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use storystate_core::canonical::canonical_json;
use storystate_core::edit::{apply_batch, compute_dirty_set, diff_states, oracle_dirty_set};
use storystate_core::prompt::{
    compile, export_interchange, export_records, parse_interchange, parse_records,
    InterchangeRecord,
};
use storystate_core::state::{PhaseSplit, StoryState};
use storystate_core::testkit::{random_batch, random_single_page_batch, random_story};

fn story(seed: u64) -> StoryState {
    random_story(&mut ChaCha8Rng::seed_from_u64(seed), 12, 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_stories_are_valid(seed in any::<u64>()) {
        let s = story(seed);
        prop_assert!(s.validate().is_valid(), "{:?}", s.validate());
    }

    #[test]
    fn rule_dirty_set_matches_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = random_story(&mut rng, 12, 6);
        for _ in 0..6 {
            let batch = random_batch(&mut rng, &state);
            if let Ok((next, diff)) = apply_batch(&state, &batch) {
                prop_assert!(next.validate().is_valid());
                let rules = compute_dirty_set(&state, &next, &diff);
                let oracle = oracle_dirty_set(&state, &next);
                prop_assert_eq!(&rules, &oracle, "batch {:?}", batch);
                state = next;
            }
        }
    }

    #[test]
    fn rejected_batches_leave_no_trace(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_story(&mut rng, 8, 4);
        let before = canonical_json(&state).unwrap();
        let batch = random_batch(&mut rng, &state);
        let _ = apply_batch(&state, &batch);
        prop_assert_eq!(canonical_json(&state).unwrap(), before);
    }

    #[test]
    fn diff_is_empty_iff_states_equal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_story(&mut rng, 8, 4);
        prop_assert!(diff_states(&state, &state).is_empty());
        let batch = random_batch(&mut rng, &state);
        if let Ok((next, diff)) = apply_batch(&state, &batch) {
            prop_assert_eq!(diff.is_empty(), next == state);
        }
    }

    #[test]
    fn compile_is_deterministic(seed in any::<u64>()) {
        let a = story(seed);
        let b: StoryState = serde_json::from_str(&canonical_json(&a).unwrap()).unwrap();
        let first = compile(&a).unwrap();
        let second = compile(&b).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(export_interchange(&first), export_interchange(&second));
    }

    #[test]
    fn state_json_round_trips(seed in any::<u64>()) {
        let s = story(seed);
        let text = canonical_json(&s).unwrap();
        let back: StoryState = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(canonical_json(&back).unwrap(), text);
    }

    #[test]
    fn single_page_edit_leaves_other_prompts_alone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_story(&mut rng, 12, 6);
        let batch = random_single_page_batch(&mut rng, &state);
        let (next, diff) = apply_batch(&state, &batch).unwrap();
        let target = diff.changed_page_ids();
        prop_assert!(target.len() <= 1);
        let before = compile(&state).unwrap();
        let after = compile(&next).unwrap();
        prop_assert_eq!(&before.identity, &after.identity);
        for page in &after.pages {
            if !target.contains(&page.page) {
                prop_assert_eq!(Some(page), before.page(&page.page));
            }
        }
    }

    #[test]
    fn interchange_round_trips(
        id in "[ -~\n]{1,40}",
        frames in proptest::collection::vec("[ -~\n]{0,40}", 1..6),
    ) {
        let record = InterchangeRecord { id_prompt: id, frame_prompts: frames };
        let text = storystate_core::prompt::export_record(&record);
        prop_assert_eq!(parse_interchange(&text).unwrap(), record.clone());
        let many = export_records(&[record.clone(), record.clone()]);
        prop_assert_eq!(parse_records(&many).unwrap(), vec![record.clone(), record]);
    }

    #[test]
    fn phase_split_is_monotone_and_scales(n in 1usize..200) {
        let phases = PhaseSplit::default().phases(n);
        prop_assert_eq!(phases.len(), n);
        prop_assert!(phases.windows(2).all(|w| w[0] <= w[1]));
    }
}
