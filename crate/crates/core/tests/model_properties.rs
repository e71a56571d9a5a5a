mod support;

use chrono::Duration;
use mspsc_core::predictor::{score_emotions, score_emotions_unweighted, select_candidates};
use mspsc_core::{
    default_registry, predict, process_feedback, retrieve, CheckIn, EnvSnapshot, ModelConfig,
    PersonalWeights, UserProfile,
};
use proptest::prelude::*;
use support::*;

#[test]
fn scores_match_brute_force() {
    let reg = small_registry();
    let mut rng = rng(7);
    let mut compared = 0;
    for _ in 0..300 {
        let history = random_history(&mut rng, 10);
        let snapshot = random_snapshot(&mut rng, t0() + Duration::days(30), 0.8);
        let weights = random_weights(&mut rng, &reg);
        let table = retrieve(&history, &snapshot, &reg).unwrap();
        let got = scores_vec(&score_emotions(&table, &history, &weights).unwrap());
        let want = oracle_scores(&history, &snapshot, &reg, &weights);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
        }
        compared += 1;
    }
    assert_eq!(compared, 300);
}

#[test]
fn exact_match_dominates() {
    let reg = small_registry();
    let history = vec![
        CheckIn::new("u", t0(), cell(1, 1)).with("temp", 10.0),
        CheckIn::new("u", t0() + Duration::hours(1), cell(6, 6)).with("temp", 10.5),
        CheckIn::new("u", t0() + Duration::hours(2), cell(3, 3)).with("temp", 25.0),
    ];
    let snapshot = EnvSnapshot::empty(t0() + Duration::days(1)).with("temp", 10.0);
    let table = retrieve(&history, &snapshot, &reg).unwrap();
    let z = table.weights("temp").unwrap();
    assert!(z[0] > 0.999);
    assert!(z[1] > z[2]);
}

#[test]
fn fresh_user_matches_unpersonalized_scoring() {
    let reg = small_registry();
    let mut rng = rng(11);
    for _ in 0..100 {
        let history = random_history(&mut rng, 10);
        let snapshot = random_snapshot(&mut rng, t0() + Duration::days(30), 0.8);
        let table = retrieve(&history, &snapshot, &reg).unwrap();
        let fresh = PersonalWeights::new(&reg, 1);
        assert_eq!(
            score_emotions(&table, &history, &fresh).unwrap(),
            score_emotions_unweighted(&table, &history).unwrap()
        );
    }
}

#[test]
fn scripted_weight_trace() {
    let reg = default_registry();
    let cfg = ModelConfig::default();
    let mut p = UserProfile::new("u", &reg, cfg.w_init);
    let feel = cell(5, 5);
    // every check-in carries temperature only and repeats the same emotion,
    // so the temperature vote is always a hit
    for n in 0..6 {
        let c = CheckIn::new("u", t0() + Duration::hours(n), feel).with("temperature_c", 12.0);
        process_feedback(&mut p, c, &reg, &cfg).unwrap();
        assert_eq!(p.weights.get("temperature_c"), 1 + n as u32);
        assert_eq!(p.weights.get("steps_day"), 1);
    }
    // a far-away emotion is a miss and resets to the floor
    let miss = CheckIn::new("u", t0() + Duration::hours(7), cell(0, 7)).with("temperature_c", 12.0);
    let report = process_feedback(&mut p, miss, &reg, &cfg).unwrap();
    assert_eq!(p.weights.get("temperature_c"), 0);
    assert_eq!(report.updates.len(), 1);
    assert!(!report.updates[0].hit);
    for id in reg.ids().filter(|id| *id != "temperature_c") {
        assert_eq!(p.weights.get(id), 1, "{id}");
    }
}

#[test]
fn adjacent_cell_vote_counts_as_hit() {
    let reg = default_registry();
    let cfg = ModelConfig::default();
    let mut p = UserProfile::new("u", &reg, 1);
    process_feedback(
        &mut p,
        CheckIn::new("u", t0(), cell(3, 3)).with("steps_day", 100.0),
        &reg,
        &cfg,
    )
    .unwrap();
    let next = CheckIn::new("u", t0() + Duration::hours(1), cell(4, 4)).with("steps_day", 100.0);
    process_feedback(&mut p, next, &reg, &cfg).unwrap();
    assert_eq!(p.weights.get("steps_day"), 2);
    let far = CheckIn::new("u", t0() + Duration::hours(2), cell(6, 4)).with("steps_day", 100.0);
    process_feedback(&mut p, far, &reg, &cfg).unwrap();
    assert_eq!(p.weights.get("steps_day"), 0);
}

#[test]
fn prediction_is_deterministic_and_lookahead_free() {
    let reg = small_registry();
    let cfg = ModelConfig::default();
    let mut rng = rng(5);
    let history = random_history(&mut rng, 10);
    let snapshot = random_snapshot(&mut rng, t0() + Duration::days(2), 1.0);
    let mut p = UserProfile::new("u", &reg, 1);
    p.history = history;
    let a = predict(&p, &snapshot, &reg, &cfg).unwrap();
    let b = predict(&p, &snapshot, &reg, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.generated_at, snapshot.captured_at);
}

fn ordering(
    scores: &std::collections::BTreeMap<mspsc_core::GridIndex, f64>,
    history: &[CheckIn],
) -> Vec<u8> {
    select_candidates(scores, history, 1e-9, 64, t0())
        .unwrap()
        .cells()
        .map(|c| c.flat())
        .collect()
}

proptest! {
    #[test]
    fn active_factors_normalize_and_missing_entries_are_zero(seed in any::<u64>()) {
        let reg = small_registry();
        let mut rng = rng(seed);
        let history = random_history(&mut rng, 10);
        let snapshot = random_snapshot(&mut rng, t0() + Duration::days(30), 0.8);
        let table = retrieve(&history, &snapshot, &reg).unwrap();
        for id in table.factor_ids() {
            let z = table.weights(id).unwrap();
            if table.is_active(id) {
                prop_assert!((z.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
            for (h, w) in history.iter().zip(z) {
                if h.env.get(id).is_none() {
                    prop_assert_eq!(*w, 0.0);
                }
                prop_assert!(*w >= 0.0);
            }
        }
    }

    #[test]
    fn scaling_weights_keeps_candidate_order(seed in any::<u64>(), factor in 1u32..50) {
        let reg = small_registry();
        let mut rng = rng(seed);
        let history = random_history(&mut rng, 10);
        let snapshot = random_snapshot(&mut rng, t0() + Duration::days(30), 0.9);
        let weights = random_weights(&mut rng, &reg);
        let mut scaled = weights.clone();
        for id in reg.ids() {
            scaled.set(id, weights.get(id) * factor);
        }
        let table = retrieve(&history, &snapshot, &reg).unwrap();
        let a = score_emotions(&table, &history, &weights).unwrap();
        let b = score_emotions(&table, &history, &scaled).unwrap();
        prop_assert_eq!(ordering(&a, &history), ordering(&b, &history));
    }

    #[test]
    fn closer_values_weigh_more(a in -30.0..30.0f64, b in -30.0..30.0f64, x in -30.0..30.0f64) {
        prop_assume!((a - x).abs() + 1e-9 < (b - x).abs());
        let reg = small_registry();
        let history = vec![
            CheckIn::new("u", t0(), cell(0, 0)).with("temp", a),
            CheckIn::new("u", t0() + Duration::hours(1), cell(7, 7)).with("temp", b),
        ];
        let table = retrieve(&history, &EnvSnapshot::empty(t0()).with("temp", x), &reg).unwrap();
        let z = table.weights("temp").unwrap();
        prop_assert!(z[0] > z[1]);
    }
}
