//! Independent reference implementations and generators shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use mspsc_core::dataset::Dataset;
use mspsc_core::evaluation::{ForecastSession, Forecaster};
use mspsc_core::factor::FactorDescriptor;
use mspsc_core::{
    CheckIn, EnvSnapshot, FactorRegistry, FactorValue, GridIndex, ModelError, PersonalWeights,
    Prediction, RangePolicy, SourceGroup,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()
}

pub fn cell(col: u8, row: u8) -> GridIndex {
    GridIndex::new(col, row).unwrap()
}

/// Two numeric factors and one categorical factor.
pub fn small_registry() -> FactorRegistry {
    FactorRegistry::new(
        vec![
            FactorDescriptor::numeric("temp", "C", (-40.0, 50.0), SourceGroup::Weather),
            FactorDescriptor::numeric("steps", "count", (0.0, 100_000.0), SourceGroup::Fitness),
            FactorDescriptor::categorical("sky", SourceGroup::Weather),
        ],
        RangePolicy::Reject,
    )
    .unwrap()
}

/// Brute-force score of every one of the 64 emotions: for each emotion, sum
/// over factors present in the snapshot and over history positions carrying
/// that emotion of `w_i · s_{i,t} / Σ_t' s_{i,t'}`.
pub fn oracle_scores(
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
    registry: &FactorRegistry,
    weights: &PersonalWeights,
) -> [f64; 64] {
    let mut out = [0.0; 64];
    let raw = |h: &CheckIn, id: &str, cur: &FactorValue| -> f64 {
        match (h.env.get(id), cur) {
            (None, _) => 0.0,
            (Some(FactorValue::Numeric(a)), FactorValue::Numeric(b)) => {
                1.0 / ((a - b).abs() + 1e-6)
            }
            (Some(FactorValue::Categorical(a)), FactorValue::Categorical(b)) => {
                1.0 / (if a == b { 0.0 } else { 1.0 } + 1e-6)
            }
            _ => panic!("kind mismatch in oracle input"),
        }
    };
    for (e, slot) in out.iter_mut().enumerate() {
        let e = GridIndex::from_flat(e as u8).unwrap();
        for d in registry.descriptors() {
            let Some(cur) = snapshot.get(&d.factor_id) else {
                continue;
            };
            let total: f64 = history.iter().map(|h| raw(h, &d.factor_id, cur)).sum();
            if total == 0.0 {
                continue;
            }
            let w = f64::from(weights.get(&d.factor_id));
            for h in history.iter().filter(|h| h.emotion == e) {
                *slot += w * raw(h, &d.factor_id, cur) / total;
            }
        }
    }
    out
}

fn random_value(rng: &mut ChaCha8Rng, id: &str) -> FactorValue {
    match id {
        // small value sets so exact matches and ties occur
        "temp" => FactorValue::Numeric(*[-5.0, 0.0, 7.5, 15.0, 15.5, 30.0].choose(rng).unwrap()),
        "steps" => FactorValue::Numeric(f64::from(rng.random_range(0..20u32)) * 500.0),
        _ => FactorValue::Categorical(["clear", "rain", "snow"].choose(rng).unwrap().to_string()),
    }
}

pub fn random_snapshot(rng: &mut ChaCha8Rng, at: DateTime<Utc>, present: f64) -> EnvSnapshot {
    let mut s = EnvSnapshot::empty(at);
    for id in ["temp", "steps", "sky"] {
        if rng.random_bool(present) {
            s = s.with(id, random_value(rng, id));
        }
    }
    s
}

/// A random history of 1..=`max_len` check-ins over a handful of cells.
pub fn random_history(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<CheckIn> {
    let n = rng.random_range(1..=max_len);
    let cells: Vec<GridIndex> = (0..rng.random_range(1..=4))
        .map(|_| GridIndex::from_flat(rng.random_range(0..64)).unwrap())
        .collect();
    (0..n)
        .map(|i| {
            let at = t0() + Duration::hours(i as i64 * 7);
            let env = random_snapshot(rng, at, 0.7);
            CheckIn {
                user_id: "u".into(),
                at,
                emotion: *cells.choose(rng).unwrap(),
                env,
            }
        })
        .collect()
}

pub fn random_weights(rng: &mut ChaCha8Rng, registry: &FactorRegistry) -> PersonalWeights {
    let mut w = PersonalWeights::new(registry, 1);
    for id in registry.ids() {
        w.set(id, rng.random_range(0..6));
    }
    w
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Forecaster that reads the answer from the dataset it was given.
pub struct PerfectOracle {
    pub dataset: Dataset,
}

struct OracleSession {
    future: Vec<CheckIn>,
    seen: usize,
}

impl Forecaster for PerfectOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn session(&self, user_id: &str) -> Box<dyn ForecastSession + '_> {
        Box::new(OracleSession {
            future: self.dataset.user(user_id).unwrap_or_default().to_vec(),
            seen: 0,
        })
    }
}

impl ForecastSession for OracleSession {
    fn predict(&mut self, snapshot: &EnvSnapshot) -> Result<Prediction, ModelError> {
        let next = &self.future[self.seen];
        Ok(Prediction::single(next.emotion, 1.0, snapshot.captured_at))
    }

    fn observe(&mut self, _checkin: &CheckIn) -> Result<(), ModelError> {
        self.seen += 1;
        Ok(())
    }
}

/// Always predicts the same cell.
pub struct FixedCell(pub GridIndex);

struct FixedSession(GridIndex);

impl Forecaster for FixedCell {
    fn name(&self) -> &str {
        "fixed"
    }

    fn session(&self, _user_id: &str) -> Box<dyn ForecastSession + '_> {
        Box::new(FixedSession(self.0))
    }
}

impl ForecastSession for FixedSession {
    fn predict(&mut self, snapshot: &EnvSnapshot) -> Result<Prediction, ModelError> {
        Ok(Prediction::single(self.0, 1.0, snapshot.captured_at))
    }

    fn observe(&mut self, _checkin: &CheckIn) -> Result<(), ModelError> {
        Ok(())
    }
}

/// `users` users with `rows` hourly check-ins each, emotions uniform over
/// the grid, no environment.
pub fn uniform_dataset(seed: u64, users: usize, rows: usize) -> Dataset {
    let mut rng = rng(seed);
    let mut ds = Dataset::new();
    for u in 0..users {
        let id = format!("u{u}");
        let history = (0..rows)
            .map(|i| {
                CheckIn::new(
                    &id,
                    t0() + Duration::hours(i as i64),
                    GridIndex::from_flat(rng.random_range(0..64)).unwrap(),
                )
            })
            .collect();
        ds.insert_user(&id, history).unwrap();
    }
    ds
}

pub fn scores_vec(scores: &BTreeMap<GridIndex, f64>) -> [f64; 64] {
    let mut out = [0.0; 64];
    for (c, s) in scores {
        out[c.flat() as usize] = *s;
    }
    out
}
