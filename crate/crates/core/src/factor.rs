//! Environmental factors, their registry, and per-check-in snapshots.
//!
//! A snapshot maps factor ids to optional values. Absence is the common case
//! (most users grant few data sources) and is always represented as a missing
//! value, never as a sentinel number.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::emotion::GridIndex;
use crate::error::{DataError, FactorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceGroup {
    Weather,
    Calendar,
    Fitness,
}

impl SourceGroup {
    pub const ALL: [SourceGroup; 3] = [
        SourceGroup::Weather,
        SourceGroup::Calendar,
        SourceGroup::Fitness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceGroup::Weather => "weather",
            SourceGroup::Calendar => "calendar",
            SourceGroup::Fitness => "fitness",
        }
    }
}

impl fmt::Display for SourceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceGroup {
    type Err = FactorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weather" => Ok(SourceGroup::Weather),
            "calendar" => Ok(SourceGroup::Calendar),
            "fitness" => Ok(SourceGroup::Fitness),
            other => Err(FactorError::Config(format!(
                "unknown source group `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDescriptor {
    pub factor_id: String,
    pub kind: FactorKind,
    #[serde(default)]
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_range: Option<(f64, f64)>,
    pub source_group: SourceGroup,
}

impl FactorDescriptor {
    pub fn numeric(id: &str, unit: &str, range: (f64, f64), group: SourceGroup) -> Self {
        Self {
            factor_id: id.to_string(),
            kind: FactorKind::Numeric,
            unit: unit.to_string(),
            canonical_range: Some(range),
            source_group: group,
        }
    }

    pub fn categorical(id: &str, group: SourceGroup) -> Self {
        Self {
            factor_id: id.to_string(),
            kind: FactorKind::Categorical,
            unit: String::new(),
            canonical_range: None,
            source_group: group,
        }
    }
}

/// What to do with a numeric value outside its canonical range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangePolicy {
    #[default]
    Reject,
    Clamp,
}

#[derive(Serialize, Deserialize)]
struct RegistryDoc {
    #[serde(default)]
    range_policy: RangePolicy,
    #[serde(default, rename = "factor")]
    factors: Vec<FactorDescriptor>,
}

/// Immutable set of declared factors, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRegistry {
    descriptors: Vec<FactorDescriptor>,
    by_id: HashMap<String, usize>,
    policy: RangePolicy,
}

impl FactorRegistry {
    pub fn new(
        descriptors: Vec<FactorDescriptor>,
        policy: RangePolicy,
    ) -> Result<Self, FactorError> {
        let mut by_id = HashMap::with_capacity(descriptors.len());
        for (i, d) in descriptors.iter().enumerate() {
            if let Some((lo, hi)) = d.canonical_range {
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    return Err(FactorError::InvalidRange(d.factor_id.clone()));
                }
            }
            if by_id.insert(d.factor_id.clone(), i).is_some() {
                return Err(FactorError::DuplicateFactor(d.factor_id.clone()));
            }
        }
        Ok(Self {
            descriptors,
            by_id,
            policy,
        })
    }

    /// Parses the TOML registry document (see `docs/registry.md`).
    pub fn from_toml_str(doc: &str) -> Result<Self, FactorError> {
        let doc: RegistryDoc =
            toml::from_str(doc).map_err(|e| FactorError::Config(e.to_string()))?;
        Self::new(doc.factors, doc.range_policy)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = RegistryDoc {
            range_policy: self.policy,
            factors: self.descriptors.clone(),
        };
        toml::to_string(&doc).expect("registry serializes")
    }

    pub fn get(&self, factor_id: &str) -> Option<&FactorDescriptor> {
        self.by_id.get(factor_id).map(|&i| &self.descriptors[i])
    }

    pub fn descriptors(&self) -> &[FactorDescriptor] {
        &self.descriptors
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.descriptors.iter().map(|d| d.factor_id.as_str())
    }

    pub fn in_group(&self, group: SourceGroup) -> impl Iterator<Item = &FactorDescriptor> {
        self.descriptors
            .iter()
            .filter(move |d| d.source_group == group)
    }

    pub fn policy(&self) -> RangePolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: RangePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

impl Default for FactorRegistry {
    fn default() -> Self {
        default_registry()
    }
}

/// The shipped nine-factor registry spanning all three source groups.
pub fn default_registry() -> FactorRegistry {
    use SourceGroup::*;
    FactorRegistry::new(
        vec![
            FactorDescriptor::numeric("temperature_c", "degC", (-40.0, 50.0), Weather),
            FactorDescriptor::numeric("precipitation_mm", "mm", (0.0, 200.0), Weather),
            FactorDescriptor::numeric("cloud_cover_pct", "%", (0.0, 100.0), Weather),
            FactorDescriptor::categorical("condition", Weather),
            FactorDescriptor::numeric("event_count_day", "events", (0.0, 50.0), Calendar),
            FactorDescriptor::numeric("busy_hours_day", "h", (0.0, 24.0), Calendar),
            FactorDescriptor::numeric("steps_day", "steps", (0.0, 100_000.0), Fitness),
            FactorDescriptor::numeric("sleep_hours", "h", (0.0, 24.0), Fitness),
            FactorDescriptor::numeric("resting_hr", "bpm", (20.0, 220.0), Fitness),
        ],
        RangePolicy::Reject,
    )
    .expect("default registry is well formed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorValue {
    Numeric(f64),
    Categorical(String),
}

impl FactorValue {
    pub fn kind(&self) -> FactorKind {
        match self {
            FactorValue::Numeric(_) => FactorKind::Numeric,
            FactorValue::Categorical(_) => FactorKind::Categorical,
        }
    }

    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            FactorValue::Numeric(v) => Some(*v),
            FactorValue::Categorical(_) => None,
        }
    }
}

impl From<f64> for FactorValue {
    fn from(v: f64) -> Self {
        FactorValue::Numeric(v)
    }
}

impl From<&str> for FactorValue {
    fn from(v: &str) -> Self {
        FactorValue::Categorical(v.to_string())
    }
}

/// Environmental state at one moment. Keys may map to `None` to record an
/// explicitly absent factor; a key that is not present is equally absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub captured_at: DateTime<Utc>,
    #[serde(default)]
    pub values: BTreeMap<String, Option<FactorValue>>,
}

impl EnvSnapshot {
    pub fn empty(captured_at: DateTime<Utc>) -> Self {
        Self {
            captured_at,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, factor_id: &str, value: impl Into<FactorValue>) -> Self {
        self.values
            .insert(factor_id.to_string(), Some(value.into()));
        self
    }

    pub fn with_absent(mut self, factor_id: &str) -> Self {
        self.values.insert(factor_id.to_string(), None);
        self
    }

    pub fn get(&self, factor_id: &str) -> Option<&FactorValue> {
        self.values.get(factor_id).and_then(Option::as_ref)
    }

    /// Factors that carry a value, in key order.
    pub fn present(&self) -> impl Iterator<Item = (&str, &FactorValue)> {
        self.values
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.as_str(), v)))
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }

    /// Marks every factor of `group` absent.
    pub fn drop_group(&mut self, registry: &FactorRegistry, group: SourceGroup) {
        for d in registry.in_group(group) {
            if self.values.contains_key(&d.factor_id) {
                self.values.insert(d.factor_id.clone(), None);
            }
        }
    }
}

/// Checks every key against the registry, enforces value kinds, and applies
/// the registry's range policy to numeric values.
pub fn validate_snapshot(
    snapshot: EnvSnapshot,
    registry: &FactorRegistry,
) -> Result<EnvSnapshot, FactorError> {
    let mut out = snapshot;
    for (id, value) in out.values.iter_mut() {
        let descriptor = registry
            .get(id)
            .ok_or_else(|| FactorError::UnknownFactor(id.clone()))?;
        let Some(value) = value else { continue };
        if value.kind() != descriptor.kind {
            return Err(FactorError::KindMismatch(id.clone()));
        }
        if let FactorValue::Numeric(v) = value {
            if !v.is_finite() {
                return Err(FactorError::OutOfRange {
                    factor_id: id.clone(),
                    value: *v,
                });
            }
            if let Some((lo, hi)) = descriptor.canonical_range {
                if *v < lo || *v > hi {
                    match registry.policy() {
                        RangePolicy::Reject => {
                            return Err(FactorError::OutOfRange {
                                factor_id: id.clone(),
                                value: *v,
                            })
                        }
                        RangePolicy::Clamp => *v = v.clamp(lo, hi),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One self-reported emotion with its environmental context.
///
/// On the wire the snapshot is flattened into an `env` map and its capture
/// time is the check-in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CheckInWire", from = "CheckInWire")]
pub struct CheckIn {
    pub user_id: String,
    pub at: DateTime<Utc>,
    pub emotion: GridIndex,
    pub env: EnvSnapshot,
}

impl CheckIn {
    pub fn new(user_id: &str, at: DateTime<Utc>, emotion: GridIndex) -> Self {
        Self {
            user_id: user_id.to_string(),
            at,
            emotion,
            env: EnvSnapshot::empty(at),
        }
    }

    pub fn with(mut self, factor_id: &str, value: impl Into<FactorValue>) -> Self {
        self.env = self.env.with(factor_id, value);
        self
    }

    pub fn validated(mut self, registry: &FactorRegistry) -> Result<Self, FactorError> {
        self.env = validate_snapshot(self.env, registry)?;
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckInWire {
    user_id: String,
    at: DateTime<Utc>,
    emotion: GridIndex,
    #[serde(default)]
    env: BTreeMap<String, Option<FactorValue>>,
}

impl From<CheckIn> for CheckInWire {
    fn from(c: CheckIn) -> Self {
        Self {
            user_id: c.user_id,
            at: c.at,
            emotion: c.emotion,
            env: c.env.values,
        }
    }
}

impl From<CheckInWire> for CheckIn {
    fn from(w: CheckInWire) -> Self {
        Self {
            user_id: w.user_id,
            at: w.at,
            emotion: w.emotion,
            env: EnvSnapshot {
                captured_at: w.at,
                values: w.env,
            },
        }
    }
}
