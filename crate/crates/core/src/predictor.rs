//! Turning similarity weights and personalization weights into a ranked set
//! of candidate emotions.
//!
//! The score of emotion `e` is `Σ_i Σ_t w_i · z_{i,t} · [e_t = e]` over the
//! active factors `i` and history positions `t`. This is the additive form
//! of the log-objective's factorized vote and shares its argmax wherever the
//! vote has support.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::emotion::GridIndex;
use crate::error::ModelError;
use crate::factor::{CheckIn, EnvSnapshot, FactorRegistry};
use crate::profile::{PersonalWeights, UserProfile};
use crate::similarity::{retrieve, SimilarityTable};

/// Score given to the modal-emotion fallback candidate.
pub const FALLBACK_SCORE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cell: GridIndex,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Distinct cells, scores non-increasing and positive.
    pub candidates: Vec<Candidate>,
    pub generated_at: DateTime<Utc>,
    pub factors_used: Vec<String>,
    /// Set when no factor contributed and the modal emotion was returned.
    #[serde(default)]
    pub fallback: bool,
}

impl Prediction {
    pub fn single(cell: GridIndex, score: f64, generated_at: DateTime<Utc>) -> Self {
        Self {
            candidates: vec![Candidate { cell, score }],
            generated_at,
            factors_used: Vec::new(),
            fallback: false,
        }
    }

    pub fn top(&self) -> GridIndex {
        self.candidates[0].cell
    }

    pub fn cells(&self) -> impl Iterator<Item = GridIndex> + '_ {
        self.candidates.iter().map(|c| c.cell)
    }
}

fn accumulate(
    table: &SimilarityTable,
    history: &[CheckIn],
    weight_of: impl Fn(&str) -> f64,
) -> Result<BTreeMap<GridIndex, f64>, ModelError> {
    if history.is_empty() {
        return Err(ModelError::EmptyHistory);
    }
    let mut scores: BTreeMap<GridIndex, f64> = BTreeMap::new();
    for (factor_id, z) in table.active_factors() {
        let w = weight_of(factor_id);
        for (checkin, &z_t) in history.iter().zip(z) {
            if z_t > 0.0 {
                *scores.entry(checkin.emotion).or_insert(0.0) += w * z_t;
            }
        }
    }
    scores.retain(|_, s| *s > 0.0);
    Ok(scores)
}

/// Personalized scores. Emotions with zero score are omitted.
pub fn score_emotions(
    table: &SimilarityTable,
    history: &[CheckIn],
    weights: &PersonalWeights,
) -> Result<BTreeMap<GridIndex, f64>, ModelError> {
    accumulate(table, history, |id| f64::from(weights.get(id)))
}

/// Scores with every factor weighted equally, ignoring personalization.
pub fn score_emotions_unweighted(
    table: &SimilarityTable,
    history: &[CheckIn],
) -> Result<BTreeMap<GridIndex, f64>, ModelError> {
    accumulate(table, history, |_| 1.0)
}

fn last_positions(history: &[CheckIn]) -> HashMap<GridIndex, usize> {
    history
        .iter()
        .enumerate()
        .map(|(t, c)| (c.emotion, t))
        .collect()
}

/// Most frequent emotion in `history`, ties going to the most recently seen.
pub fn modal_emotion(history: &[CheckIn]) -> Option<GridIndex> {
    let last = last_positions(history);
    let mut counts: HashMap<GridIndex, usize> = HashMap::new();
    for c in history {
        *counts.entry(c.emotion).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by_key(|(cell, n)| (*n, last[cell]))
        .map(|(cell, _)| cell)
}

/// Keeps emotions scoring at least `theta · max`, best first, at most
/// `n_max` of them. Equal scores put the emotion seen most recently first.
/// Falls back to the modal historical emotion when nothing scored.
pub fn select_candidates(
    scores: &BTreeMap<GridIndex, f64>,
    history: &[CheckIn],
    theta: f64,
    n_max: usize,
    generated_at: DateTime<Utc>,
) -> Result<Prediction, ModelError> {
    let max = scores.values().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        let modal = modal_emotion(history).ok_or(ModelError::NoHistoryFallbackImpossible)?;
        return Ok(Prediction {
            candidates: vec![Candidate {
                cell: modal,
                score: FALLBACK_SCORE,
            }],
            generated_at,
            factors_used: Vec::new(),
            fallback: true,
        });
    }

    let last = last_positions(history);
    let threshold = theta * max;
    let mut kept: Vec<Candidate> = scores
        .iter()
        .filter(|(_, &s)| s >= threshold)
        .map(|(&cell, &score)| Candidate { cell, score })
        .collect();
    kept.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| {
            let la = last.get(&a.cell).copied().unwrap_or(0);
            let lb = last.get(&b.cell).copied().unwrap_or(0);
            lb.cmp(&la)
        })
    });
    kept.truncate(n_max.max(1));
    Ok(Prediction {
        candidates: kept,
        generated_at,
        factors_used: Vec::new(),
        fallback: false,
    })
}

/// Full prediction for `profile` under `snapshot`. Deterministic for fixed
/// inputs: the timestamp is the snapshot's capture time.
pub fn predict(
    profile: &UserProfile,
    snapshot: &EnvSnapshot,
    registry: &FactorRegistry,
    config: &ModelConfig,
) -> Result<Prediction, ModelError> {
    predict_from(
        &profile.history,
        &profile.weights,
        snapshot,
        registry,
        config,
    )
}

pub fn predict_from(
    history: &[CheckIn],
    weights: &PersonalWeights,
    snapshot: &EnvSnapshot,
    registry: &FactorRegistry,
    config: &ModelConfig,
) -> Result<Prediction, ModelError> {
    if history.is_empty() {
        return Err(ModelError::NoHistoryFallbackImpossible);
    }
    let table = retrieve(history, snapshot, registry)?;
    let scores = score_emotions(&table, history, weights)?;
    let mut prediction = select_candidates(
        &scores,
        history,
        config.theta,
        config.n_max,
        snapshot.captured_at,
    )?;
    if !prediction.fallback {
        prediction.factors_used = table
            .active_factors()
            .map(|(id, _)| id.to_string())
            .collect();
    }
    Ok(prediction)
}
