//! Per-factor similarity between the current snapshot and each past check-in.
//!
//! For factor `i` and history position `t` the raw similarity is the
//! reciprocal distance `1 / (|s_t,i − s_i| + ε)`, and the weights are that
//! quantity normalized over `t` so they sum to one. A history entry lacking
//! the factor contributes exactly zero.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::error::{FactorError, ModelError};
use crate::factor::{CheckIn, EnvSnapshot, FactorKind, FactorRegistry, FactorValue};

/// Added to every distance so an exact match stays finite.
pub const DIVISION_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("value kind does not match the factor kind")]
pub struct KindMismatch;

fn distance(
    hist: &FactorValue,
    current: &FactorValue,
    kind: FactorKind,
) -> Result<f64, KindMismatch> {
    match (kind, hist, current) {
        (FactorKind::Numeric, FactorValue::Numeric(h), FactorValue::Numeric(c)) => {
            Ok((h - c).abs())
        }
        (FactorKind::Categorical, FactorValue::Categorical(h), FactorValue::Categorical(c)) => {
            Ok(if h == c { 0.0 } else { 1.0 })
        }
        _ => Err(KindMismatch),
    }
}

/// Unnormalized similarity of one historical value to the current one.
/// Categorical values are at distance 0 when equal and 1 otherwise.
pub fn raw_similarity(
    hist: Option<&FactorValue>,
    current: &FactorValue,
    kind: FactorKind,
) -> Result<f64, KindMismatch> {
    if current.kind() != kind {
        return Err(KindMismatch);
    }
    match hist {
        None => Ok(0.0),
        Some(h) => Ok(1.0 / (distance(h, current, kind)? + DIVISION_EPSILON)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub weights: Vec<f64>,
    /// False when every raw value was zero, i.e. no history entry carries the
    /// factor.
    pub active: bool,
}

pub fn normalize_factor(raw: &[f64]) -> Normalized {
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Normalized {
            weights: raw.iter().map(|r| r / total).collect(),
            active: true,
        }
    } else {
        Normalized {
            weights: vec![0.0; raw.len()],
            active: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FactorColumn {
    weights: Vec<f64>,
    active: bool,
}

/// Normalized similarity weights keyed by (factor, history position).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityTable {
    history_len: usize,
    columns: BTreeMap<String, FactorColumn>,
}

impl SimilarityTable {
    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn weight(&self, factor_id: &str, t: usize) -> Option<f64> {
        self.columns
            .get(factor_id)
            .and_then(|c| c.weights.get(t).copied())
    }

    pub fn weights(&self, factor_id: &str) -> Option<&[f64]> {
        self.columns.get(factor_id).map(|c| c.weights.as_slice())
    }

    pub fn is_active(&self, factor_id: &str) -> bool {
        self.columns.get(factor_id).is_some_and(|c| c.active)
    }

    /// Every factor that was present in the query snapshot.
    pub fn factor_ids(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Factors present in the snapshot and in at least one history entry.
    pub fn active_factors(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns
            .iter()
            .filter(|(_, c)| c.active)
            .map(|(k, c)| (k.as_str(), c.weights.as_slice()))
    }
}

/// Builds the similarity table of `snapshot` against `history`. Factors
/// absent from the snapshot do not appear in the table.
pub fn retrieve(
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
    registry: &FactorRegistry,
) -> Result<SimilarityTable, ModelError> {
    if history.is_empty() {
        return Err(ModelError::EmptyHistory);
    }
    let mut columns = BTreeMap::new();
    for (factor_id, current) in snapshot.present() {
        let descriptor = registry
            .get(factor_id)
            .ok_or_else(|| FactorError::UnknownFactor(factor_id.to_string()))?;
        let raw = history
            .iter()
            .map(|h| raw_similarity(h.env.get(factor_id), current, descriptor.kind))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| FactorError::KindMismatch(factor_id.to_string()))?;
        let Normalized { weights, active } = normalize_factor(&raw);
        columns.insert(factor_id.to_string(), FactorColumn { weights, active });
    }
    Ok(SimilarityTable {
        history_len: history.len(),
        columns,
    })
}
