//! Learning which factors a user's mood tracks.
//!
//! For every factor present in a new check-in, the top-k most similar past
//! check-ins form a cluster whose majority emotion is that factor's
//! standalone guess. A guess within tolerance of the reported emotion bumps
//! the factor's weight by one; a miss resets it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::emotion::{cells_within_tolerance, GridIndex};
use crate::error::ModelError;
use crate::factor::{CheckIn, FactorRegistry};
use crate::profile::UserProfile;
use crate::similarity::{retrieve, SimilarityTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub position: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub factor_id: String,
    /// Descending by weight; ties put the more recent position first.
    pub members: Vec<ClusterMember>,
}

/// Top-`k` history positions by similarity weight for one factor.
pub fn build_cluster(
    table: &SimilarityTable,
    factor_id: &str,
    k: usize,
) -> Result<Cluster, ModelError> {
    if !table.is_active(factor_id) {
        return Err(ModelError::InactiveFactor(factor_id.to_string()));
    }
    let weights = table.weights(factor_id).unwrap_or_default();
    let mut members: Vec<ClusterMember> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(position, &weight)| ClusterMember { position, weight })
        .collect();
    members.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(b.position.cmp(&a.position))
    });
    members.truncate(k);
    Ok(Cluster {
        factor_id: factor_id.to_string(),
        members,
    })
}

/// Most frequent emotion among the cluster members. Ties go to the larger
/// summed weight, then to the most recent member.
pub fn cluster_vote(cluster: &Cluster, history: &[CheckIn]) -> Result<GridIndex, ModelError> {
    #[derive(Default)]
    struct Tally {
        count: usize,
        weight: f64,
        latest: usize,
    }

    if cluster.members.is_empty() {
        return Err(ModelError::EmptyCluster);
    }
    let mut tallies: BTreeMap<GridIndex, Tally> = BTreeMap::new();
    for m in &cluster.members {
        let emotion = history
            .get(m.position)
            .ok_or(ModelError::EmptyHistory)?
            .emotion;
        let tally = tallies.entry(emotion).or_default();
        tally.count += 1;
        tally.weight += m.weight;
        tally.latest = tally.latest.max(m.position);
    }
    let (winner, _) = tallies
        .into_iter()
        .max_by(|(_, a), (_, b)| {
            a.count
                .cmp(&b.count)
                .then(a.weight.total_cmp(&b.weight))
                .then(a.latest.cmp(&b.latest))
        })
        .expect("non-empty cluster");
    Ok(winner)
}

/// The reward rule: `w + 1` on a within-tolerance vote, otherwise 0.
pub fn update_weight(w: u32, predicted: GridIndex, actual: GridIndex, eps: f64) -> u32 {
    update_weight_with_floor(w, predicted, actual, eps, 0)
}

/// Like [`update_weight`] but a miss drops the weight to `floor` instead of 0.
pub fn update_weight_with_floor(
    w: u32,
    predicted: GridIndex,
    actual: GridIndex,
    eps: f64,
    floor: u32,
) -> u32 {
    if cells_within_tolerance(predicted, actual, eps) {
        w.saturating_add(1)
    } else {
        floor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorUpdate {
    pub factor_id: String,
    pub vote: GridIndex,
    pub hit: bool,
    pub before: u32,
    pub after: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    /// Index of the new check-in in the user's history.
    pub position: usize,
    pub updates: Vec<FactorUpdate>,
}

/// Scores each factor's cluster vote against a newly reported check-in and
/// then appends the check-in to the history.
///
/// Clusters are built as if predicting the new check-in from its own
/// snapshot, so only past check-ins can vote. Nothing is modified on error.
pub fn process_feedback(
    profile: &mut UserProfile,
    checkin: CheckIn,
    registry: &FactorRegistry,
    config: &ModelConfig,
) -> Result<FeedbackReport, ModelError> {
    if checkin.user_id != profile.user_id {
        return Err(ModelError::UnknownUser(checkin.user_id));
    }
    if let Some(last) = profile.last_checkin() {
        if checkin.at <= last.at {
            return Err(ModelError::OutOfOrderCheckIn {
                at: checkin.at,
                last: last.at,
            });
        }
    }

    let mut updates = Vec::new();
    if !profile.history.is_empty() {
        let table = retrieve(&profile.history, &checkin.env, registry)?;
        for (factor_id, _) in table.active_factors() {
            let cluster = build_cluster(&table, factor_id, config.k)?;
            let vote = cluster_vote(&cluster, &profile.history)?;
            let before = profile.weights.get(factor_id);
            let after = update_weight_with_floor(
                before,
                vote,
                checkin.emotion,
                config.eps,
                config.reset_floor,
            );
            updates.push(FactorUpdate {
                factor_id: factor_id.to_string(),
                vote,
                hit: cells_within_tolerance(vote, checkin.emotion, config.eps),
                before,
                after,
            });
        }
    }

    for u in &updates {
        profile.weights.set(&u.factor_id, u.after);
    }
    if !updates.is_empty() {
        profile.weights.bump_rounds();
    }
    profile.history.push(checkin);
    Ok(FeedbackReport {
        position: profile.history.len() - 1,
        updates,
    })
}
