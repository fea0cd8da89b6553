mod common;

use std::time::Instant;

use actorid::extractor::{
    constrained_viterbi, score_path, train_extractor, viterbi, CrfModel, Tag, TagSequence, TrainingSequence,
};
use actorid::featurize::FeatureVector;
use common::oracle::{brute_force, random_instance, HASH_SPACE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn decoders_match_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..200 {
        let len = rng.gen_range(1..=6);
        let (m, f) = random_instance(&mut rng, len, trial % 2 == 0);
        let (free, free_score) = brute_force(&m, &f, false);
        let (forced, forced_score) = brute_force(&m, &f, true);
        assert_eq!(viterbi(&m, &f).unwrap(), free, "trial {trial}");
        assert_eq!(constrained_viterbi(&m, &f).unwrap(), forced, "trial {trial}");
        assert!(forced_score <= free_score);
        // with ties the equality holds exactly when some maximising path has a mention
        let any_max_mention = common::oracle::bio_paths(len).iter().any(|p| {
            p.has_mention() && (score_path(&m, &f, p).unwrap() - free_score).abs() < 1e-9
        });
        assert_eq!((free_score - forced_score).abs() < 1e-9, any_max_mention, "trial {trial}");
    }
}

#[test]
fn score_path_matches_resummation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (m, f) = random_instance(&mut rng, 5, false);
        let tags = common::oracle::bio_paths(5);
        let path = &tags[rng.gen_range(0..tags.len())];
        let mut expect = m.start[path.0[0].index()] + m.end[path.0[4].index()];
        for (i, fv) in f.iter().enumerate() {
            for (id, v) in fv.iter() {
                expect += v * m.emissions.get(&id).map_or(0.0, |w| w[path.0[i].index()]);
            }
        }
        for w in path.0.windows(2) {
            expect += m.transitions[w[0].index()][w[1].index()];
        }
        let got = score_path(&m, &f, path).unwrap();
        assert!((got - expect).abs() < 1e-9);
    }
}

#[test]
fn length_one_path_score() {
    let mut m = CrfModel::zeros(HASH_SPACE);
    m.start = [0.5, 1.0, -9.0];
    m.end = [0.25, 2.0, 0.0];
    m.emissions.insert(3, [1.0, 4.0, 0.0]);
    let f = vec![FeatureVector::from_entries(vec![(3, 2.0)])];
    assert_eq!(score_path(&m, &f, &TagSequence(vec![Tag::B])).unwrap(), 1.0 + 2.0 + 8.0);
    assert!(score_path(&m, &f, &TagSequence(vec![])).is_err());
    assert!(viterbi(&m, &[]).is_err());
    assert!(constrained_viterbi(&m, &[]).is_err());
}

#[test]
fn strong_outside_emissions_decode_to_all_o() {
    let mut m = CrfModel::zeros(HASH_SPACE);
    m.emissions.insert(1, [10.0, 0.0, 0.0]);
    let f = vec![FeatureVector::from_entries(vec![(1, 1.0)]); 4];
    assert_eq!(viterbi(&m, &f).unwrap().0, vec![Tag::O; 4]);
    let forced = constrained_viterbi(&m, &f).unwrap();
    assert_eq!(forced.0.iter().filter(|t| **t == Tag::B).count(), 1);
    assert_eq!(forced.0.iter().filter(|t| **t == Tag::I).count(), 0);
}

#[test]
fn ten_thousand_tokens_under_a_second() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, _) = random_instance(&mut rng, 1, false);
    let f: Vec<FeatureVector> = (0..10_000)
        .map(|i| FeatureVector::from_entries(vec![((i % 10) as u32, 1.0)]))
        .collect();
    let t = Instant::now();
    let a = viterbi(&m, &f).unwrap();
    let b = constrained_viterbi(&m, &f).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0, "{:?}", t.elapsed());
    assert_eq!(a.len(), 10_000);
    assert!(b.is_valid() && b.has_mention());
}

#[test]
fn single_sequence_is_learned() {
    let features: Vec<FeatureVector> = (0..5).map(|i| FeatureVector::from_entries(vec![(i, 1.0)])).collect();
    let gold = TagSequence(vec![Tag::O, Tag::B, Tag::I, Tag::O, Tag::O]);
    let seq = TrainingSequence {
        claim_id: "c1".into(),
        tokens: Vec::new(),
        features: features.clone(),
        gold: gold.clone(),
    };
    let m = train_extractor(std::slice::from_ref(&seq), HASH_SPACE, 5, 13).unwrap();
    assert_eq!(constrained_viterbi(&m, &features).unwrap(), gold);
    assert_eq!(train_extractor(&[seq], HASH_SPACE, 5, 13).unwrap(), m);
}

#[test]
fn invalid_gold_names_the_claim() {
    let seq = TrainingSequence {
        claim_id: "bad-claim".into(),
        tokens: Vec::new(),
        features: vec![FeatureVector::new(); 2],
        gold: TagSequence(vec![Tag::O, Tag::I]),
    };
    let err = train_extractor(&[seq], HASH_SPACE, 1, 13).unwrap_err();
    assert!(err.to_string().contains("bad-claim"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decoded_paths_are_valid_and_ordered(seed in any::<u64>(), len in 1usize..40, integral in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, f) = random_instance(&mut rng, len, integral);
        let free = viterbi(&m, &f).unwrap();
        let forced = constrained_viterbi(&m, &f).unwrap();
        prop_assert!(free.is_valid());
        prop_assert!(forced.is_valid());
        prop_assert!(forced.has_mention());
        let fs = score_path(&m, &f, &free).unwrap();
        let cs = score_path(&m, &f, &forced).unwrap();
        prop_assert!(cs <= fs + 1e-9);
        if free.has_mention() {
            prop_assert_eq!(&forced, &free);
        } else if !integral {
            // tied weights can hide a mention-bearing path at the same score
            prop_assert!(cs < fs);
        }
    }
}
