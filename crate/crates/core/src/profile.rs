use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ConfigOverrides;
use crate::factor::{CheckIn, FactorRegistry};

/// Per-user personalization weights, one non-negative integer per factor.
///
/// Factors not in the map read as `w_init`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalWeights {
    weights: BTreeMap<String, u32>,
    w_init: u32,
    feedback_rounds: u64,
}

impl PersonalWeights {
    pub fn new(registry: &FactorRegistry, w_init: u32) -> Self {
        Self {
            weights: registry.ids().map(|id| (id.to_string(), w_init)).collect(),
            w_init,
            feedback_rounds: 0,
        }
    }

    pub fn uniform(w_init: u32) -> Self {
        Self {
            weights: BTreeMap::new(),
            w_init,
            feedback_rounds: 0,
        }
    }

    pub fn get(&self, factor_id: &str) -> u32 {
        self.weights.get(factor_id).copied().unwrap_or(self.w_init)
    }

    pub fn set(&mut self, factor_id: &str, value: u32) {
        self.weights.insert(factor_id.to_string(), value);
    }

    pub fn w_init(&self) -> u32 {
        self.w_init
    }

    /// Number of check-ins that evaluated at least one factor.
    pub fn feedback_rounds(&self) -> u64 {
        self.feedback_rounds
    }

    pub(crate) fn bump_rounds(&mut self) {
        self.feedback_rounds += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn as_map(&self) -> &BTreeMap<String, u32> {
        &self.weights
    }
}

/// A user's check-in history together with the weights learned from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub history: Vec<CheckIn>,
    pub weights: PersonalWeights,
    #[serde(default, skip_serializing_if = "ConfigOverrides::is_empty")]
    pub overrides: ConfigOverrides,
}

impl UserProfile {
    pub fn new(user_id: &str, registry: &FactorRegistry, w_init: u32) -> Self {
        Self {
            user_id: user_id.to_string(),
            history: Vec::new(),
            weights: PersonalWeights::new(registry, w_init),
            overrides: ConfigOverrides::default(),
        }
    }

    pub fn last_checkin(&self) -> Option<&CheckIn> {
        self.history.last()
    }
}
