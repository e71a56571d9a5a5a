use serde::{Deserialize, Serialize};

use crate::emotion::DEFAULT_TOLERANCE;

/// Hyper-parameters of the personalized predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Cluster size for the per-factor top-k selection.
    pub k: usize,
    /// Per-axis tolerance for reward updates.
    pub eps: f64,
    /// Candidates scoring at least `theta · max` are presented.
    pub theta: f64,
    /// Upper bound on presented candidates.
    pub n_max: usize,
    /// Initial personalization weight of every factor.
    pub w_init: u32,
    /// Value a weight drops to after a missed vote.
    pub reset_floor: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 5,
            eps: DEFAULT_TOLERANCE,
            theta: 0.8,
            n_max: 5,
            w_init: 1,
            reset_floor: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err("eps must be a finite non-negative number".into());
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err("theta must lie in (0, 1]".into());
        }
        if self.n_max == 0 {
            return Err("n_max must be positive".into());
        }
        Ok(())
    }

    pub fn with_overrides(&self, overrides: &ConfigOverrides) -> Self {
        Self {
            k: overrides.k.unwrap_or(self.k),
            eps: overrides.eps.unwrap_or(self.eps),
            theta: overrides.theta.unwrap_or(self.theta),
            n_max: overrides.n_max.unwrap_or(self.n_max),
            ..*self
        }
    }
}

/// Per-user replacements for the deployment defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
}

impl ConfigOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}
