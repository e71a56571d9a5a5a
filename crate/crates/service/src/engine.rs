//! In-memory user state backed by the event log.
//!
//! Each user has a writer lock and an immutable state snapshot behind an
//! `Arc`. Writers build the next state, persist the event, then swap the
//! snapshot in; readers clone the `Arc` and never wait on writers.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use mspsc_core::ingest::SourceRecord;
use mspsc_core::personalization::FactorUpdate;
use mspsc_core::{
    predict, process_feedback, snapshot_at, validate_snapshot, CheckIn, ConfigOverrides,
    EnvSnapshot, FactorError, FactorRegistry, ModelConfig, ModelError, Prediction, SourceGroup,
    UserProfile,
};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{CorruptLogEntry, Event, Store};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("user `{0}` already exists")]
    UserExists(String),
    #[error("invalid user id `{0}`")]
    InvalidUserId(String),
    #[error("check-in is for user `{found}`, not `{expected}`")]
    UserMismatch { expected: String, found: String },
    #[error("source records must belong to the {0} group")]
    GroupMismatch(SourceGroup),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error("log is not consistent with replay: {0}")]
    Replay(String),
}

/// What a recorded check-in reports back. Replaying the same idempotency
/// key returns the stored acknowledgment unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckInAck {
    pub user_id: String,
    pub at: DateTime<Utc>,
    pub position: usize,
    pub updates: Vec<FactorUpdate>,
    pub weights: BTreeMap<String, u32>,
    pub feedback_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsView {
    pub user_id: String,
    pub weights: BTreeMap<String, u32>,
    pub w_init: u32,
    pub feedback_rounds: u64,
    pub checkins: usize,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub profile: UserProfile,
    pub sources: Vec<SourceRecord>,
    pub acks: BTreeMap<String, CheckInAck>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotSource {
    /// Assemble the snapshot from stored source records at this instant.
    Auto(DateTime<Utc>),
    Explicit(EnvSnapshot),
}

#[derive(Debug)]
struct UserSlot {
    writer: Mutex<()>,
    state: RwLock<Arc<UserState>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RebuildReport {
    pub events: usize,
    pub users: usize,
    pub corrupt: Option<CorruptLogEntry>,
}

pub fn valid_user_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

fn ack_for(profile: &UserProfile, updates: Vec<FactorUpdate>, position: usize) -> CheckInAck {
    CheckInAck {
        user_id: profile.user_id.clone(),
        at: profile.history[position].at,
        position,
        updates,
        weights: profile.weights.as_map().clone(),
        feedback_rounds: profile.weights.feedback_rounds(),
    }
}

/// Applies one event to a user map. Shared by live writes and replay so
/// both produce identical state.
fn apply(
    users: &mut BTreeMap<String, UserState>,
    event: &Event,
    registry: &FactorRegistry,
    config: &ModelConfig,
) -> Result<Option<CheckInAck>, EngineError> {
    match event {
        Event::ProfileCreated { user_id, overrides } => {
            if users.contains_key(user_id) {
                return Err(EngineError::UserExists(user_id.clone()));
            }
            let mut profile = UserProfile::new(user_id, registry, config.w_init);
            profile.overrides = *overrides;
            users.insert(
                user_id.clone(),
                UserState {
                    profile,
                    sources: Vec::new(),
                    acks: BTreeMap::new(),
                },
            );
            Ok(None)
        }
        Event::CheckInRecorded {
            checkin,
            idempotency_key,
        } => {
            let state = users
                .get_mut(&checkin.user_id)
                .ok_or_else(|| EngineError::UnknownUser(checkin.user_id.clone()))?;
            let cfg = config.with_overrides(&state.profile.overrides);
            let report = process_feedback(&mut state.profile, checkin.clone(), registry, &cfg)?;
            let ack = ack_for(&state.profile, report.updates, report.position);
            if let Some(key) = idempotency_key {
                state.acks.insert(key.clone(), ack.clone());
            }
            Ok(Some(ack))
        }
        Event::ConfigChanged { user_id, overrides } => {
            let state = users
                .get_mut(user_id)
                .ok_or_else(|| EngineError::UnknownUser(user_id.clone()))?;
            state.profile.overrides = *overrides;
            Ok(None)
        }
        Event::SourceRecordsAdded { user_id, records } => {
            let state = users
                .get_mut(user_id)
                .ok_or_else(|| EngineError::UnknownUser(user_id.clone()))?;
            state.sources.extend(records.iter().cloned());
            Ok(None)
        }
    }
}

/// Folds a sequence of events into per-user state.
pub fn rebuild(
    events: &[Event],
    registry: &FactorRegistry,
    config: &ModelConfig,
) -> Result<BTreeMap<String, UserState>, EngineError> {
    let mut users = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        apply(&mut users, e, registry, config)
            .map_err(|err| EngineError::Replay(format!("event {i}: {err}")))?;
    }
    Ok(users)
}

pub struct Engine {
    registry: FactorRegistry,
    config: ModelConfig,
    store: Mutex<Store>,
    users: RwLock<HashMap<String, Arc<UserSlot>>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store.lock().path())
            .field("users", &self.users.read().len())
            .finish()
    }
}

impl Engine {
    /// Opens the log at `path` and rebuilds every user from it.
    pub fn open(
        path: impl AsRef<Path>,
        registry: FactorRegistry,
        config: ModelConfig,
    ) -> Result<(Self, RebuildReport), EngineError> {
        config.validate().map_err(EngineError::InvalidConfig)?;
        let (store, contents) = Store::open(path)?;
        let users = rebuild(&contents.events, &registry, &config)?;
        let report = RebuildReport {
            events: contents.events.len(),
            users: users.len(),
            corrupt: contents.corrupt,
        };
        let users = users
            .into_iter()
            .map(|(id, state)| {
                let slot = UserSlot {
                    writer: Mutex::new(()),
                    state: RwLock::new(Arc::new(state)),
                };
                (id, Arc::new(slot))
            })
            .collect();
        let engine = Self {
            registry,
            config,
            store: Mutex::new(store),
            users: RwLock::new(users),
        };
        Ok((engine, report))
    }

    pub fn registry(&self) -> &FactorRegistry {
        &self.registry
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn user_count(&self) -> usize {
        self.users.read().len()
    }

    fn slot(&self, user_id: &str) -> Result<Arc<UserSlot>, EngineError> {
        self.users
            .read()
            .get(user_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownUser(user_id.to_string()))
    }

    pub fn state(&self, user_id: &str) -> Result<Arc<UserState>, EngineError> {
        Ok(self.slot(user_id)?.state.read().clone())
    }

    /// Every user's current state, for comparison against a replay.
    pub fn snapshot_all(&self) -> BTreeMap<String, UserState> {
        let slots: Vec<(String, Arc<UserSlot>)> = self
            .users
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        slots
            .into_iter()
            .map(|(k, slot)| (k, (**slot.state.read()).clone()))
            .collect()
    }

    fn persist(&self, event: &Event) -> Result<(), EngineError> {
        self.store.lock().append(event)?;
        Ok(())
    }

    fn effective_config(&self, overrides: &ConfigOverrides) -> Result<ModelConfig, EngineError> {
        let cfg = self.config.with_overrides(overrides);
        cfg.validate().map_err(EngineError::InvalidConfig)?;
        Ok(cfg)
    }

    pub fn create_user(
        &self,
        user_id: &str,
        overrides: ConfigOverrides,
    ) -> Result<WeightsView, EngineError> {
        if !valid_user_id(user_id) {
            return Err(EngineError::InvalidUserId(user_id.to_string()));
        }
        self.effective_config(&overrides)?;
        let mut users = self.users.write();
        if users.contains_key(user_id) {
            return Err(EngineError::UserExists(user_id.to_string()));
        }
        let event = Event::ProfileCreated {
            user_id: user_id.to_string(),
            overrides,
        };
        let mut fresh = BTreeMap::new();
        apply(&mut fresh, &event, &self.registry, &self.config)?;
        self.persist(&event)?;
        let state = fresh.remove(user_id).expect("just created");
        let view = self.view(&state);
        users.insert(
            user_id.to_string(),
            Arc::new(UserSlot {
                writer: Mutex::new(()),
                state: RwLock::new(Arc::new(state)),
            }),
        );
        Ok(view)
    }

    /// Runs the user's state through `event` on a copy, persists the event,
    /// then publishes the copy.
    fn write(
        &self,
        user_id: &str,
        slot: &UserSlot,
        event: Event,
    ) -> Result<Option<CheckInAck>, EngineError> {
        let current = slot.state.read().clone();
        let mut scratch = BTreeMap::from([(user_id.to_string(), (*current).clone())]);
        let ack = apply(&mut scratch, &event, &self.registry, &self.config)?;
        self.persist(&event)?;
        let next = scratch.remove(user_id).expect("user present");
        *slot.state.write() = Arc::new(next);
        Ok(ack)
    }

    /// Records a check-in. Returns the acknowledgment and whether it was
    /// newly recorded (false when the idempotency key was seen before).
    pub fn record_checkin(
        &self,
        user_id: &str,
        checkin: CheckIn,
        idempotency_key: Option<String>,
    ) -> Result<(CheckInAck, bool), EngineError> {
        let slot = self.slot(user_id)?;
        let _writer = slot.writer.lock();
        if let Some(key) = &idempotency_key {
            if let Some(ack) = slot.state.read().acks.get(key) {
                return Ok((ack.clone(), false));
            }
        }
        if checkin.user_id != user_id {
            return Err(EngineError::UserMismatch {
                expected: user_id.to_string(),
                found: checkin.user_id,
            });
        }
        let checkin = checkin.validated(&self.registry)?;
        let event = Event::CheckInRecorded {
            checkin,
            idempotency_key,
        };
        let ack = self
            .write(user_id, &slot, event)?
            .expect("check-ins acknowledge");
        Ok((ack, true))
    }

    pub fn set_config(
        &self,
        user_id: &str,
        overrides: ConfigOverrides,
    ) -> Result<WeightsView, EngineError> {
        self.effective_config(&overrides)?;
        let slot = self.slot(user_id)?;
        let _writer = slot.writer.lock();
        let event = Event::ConfigChanged {
            user_id: user_id.to_string(),
            overrides,
        };
        self.write(user_id, &slot, event)?;
        let view = self.view(&slot.state.read());
        Ok(view)
    }

    /// Stores source records for `group`. Returns how many were added.
    pub fn add_sources(
        &self,
        user_id: &str,
        group: SourceGroup,
        records: Vec<SourceRecord>,
    ) -> Result<usize, EngineError> {
        if records.iter().any(|r| r.source_group != group) {
            return Err(EngineError::GroupMismatch(group));
        }
        let slot = self.slot(user_id)?;
        if records.is_empty() {
            return Ok(0);
        }
        let n = records.len();
        let _writer = slot.writer.lock();
        let event = Event::SourceRecordsAdded {
            user_id: user_id.to_string(),
            records,
        };
        self.write(user_id, &slot, event)?;
        Ok(n)
    }

    pub fn predict(
        &self,
        user_id: &str,
        source: SnapshotSource,
    ) -> Result<Prediction, EngineError> {
        let state = self.state(user_id)?;
        let snapshot = match source {
            SnapshotSource::Auto(at) => snapshot_at(&state.sources, at, &self.registry),
            SnapshotSource::Explicit(s) => validate_snapshot(s, &self.registry)?,
        };
        let cfg = self.effective_config(&state.profile.overrides)?;
        Ok(predict(&state.profile, &snapshot, &self.registry, &cfg)?)
    }

    fn view(&self, state: &UserState) -> WeightsView {
        let w = &state.profile.weights;
        WeightsView {
            user_id: state.profile.user_id.clone(),
            weights: w.as_map().clone(),
            w_init: w.w_init(),
            feedback_rounds: w.feedback_rounds(),
            checkins: state.profile.history.len(),
            config: self.config.with_overrides(&state.profile.overrides),
        }
    }

    pub fn weights(&self, user_id: &str) -> Result<WeightsView, EngineError> {
        let state = self.state(user_id)?;
        Ok(self.view(&state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use mspsc_core::{default_registry, GridIndex};

    fn t(h: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap() + Duration::hours(h)
    }

    fn open(dir: &Path) -> (Engine, RebuildReport) {
        Engine::open(
            dir.join("log.jsonl"),
            default_registry(),
            ModelConfig::default(),
        )
        .unwrap()
    }

    fn c(h: i64, flat: u8, temp: f64) -> CheckIn {
        CheckIn::new("ann", t(h), GridIndex::from_flat(flat).unwrap()).with("temperature_c", temp)
    }

    #[test]
    fn checkins_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        let (engine, report) = open(dir.path());
        assert_eq!(report, RebuildReport::default());
        engine
            .create_user("ann", ConfigOverrides::default())
            .unwrap();
        for h in 0..10 {
            engine
                .record_checkin(
                    "ann",
                    c(h, 9 + (h % 2) as u8, 10.0 + h as f64),
                    Some(format!("k{h}")),
                )
                .unwrap();
        }
        let live = engine.snapshot_all();
        drop(engine);
        let (engine, report) = open(dir.path());
        assert_eq!(report.events, 11);
        assert_eq!(engine.snapshot_all(), live);
    }

    #[test]
    fn idempotent_replay_does_not_append() {
        let dir = tempfile::tempdir().unwrap();
        let (engine, _) = open(dir.path());
        engine
            .create_user("ann", ConfigOverrides::default())
            .unwrap();
        let (a, fresh) = engine
            .record_checkin("ann", c(0, 9, 10.0), Some("x".into()))
            .unwrap();
        assert!(fresh);
        let (b, fresh) = engine
            .record_checkin("ann", c(0, 9, 10.0), Some("x".into()))
            .unwrap();
        assert!(!fresh);
        assert_eq!(a, b);
        assert_eq!(engine.state("ann").unwrap().profile.history.len(), 1);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let (engine, _) = open(dir.path());
        assert!(matches!(
            engine.record_checkin("ann", c(0, 9, 10.0), None),
            Err(EngineError::UnknownUser(_))
        ));
        engine
            .create_user("ann", ConfigOverrides::default())
            .unwrap();
        assert!(matches!(
            engine.create_user("ann", ConfigOverrides::default()),
            Err(EngineError::UserExists(_))
        ));
        assert!(matches!(
            engine.create_user("no spaces", ConfigOverrides::default()),
            Err(EngineError::InvalidUserId(_))
        ));
        engine.record_checkin("ann", c(5, 9, 10.0), None).unwrap();
        assert!(matches!(
            engine.record_checkin("ann", c(4, 9, 10.0), None),
            Err(EngineError::Model(ModelError::OutOfOrderCheckIn { .. }))
        ));
        assert!(matches!(
            engine.record_checkin("ann", c(6, 9, 999.0), None),
            Err(EngineError::Factor(_))
        ));
        assert!(matches!(
            engine.predict("bob", SnapshotSource::Auto(t(9))),
            Err(EngineError::UnknownUser(_))
        ));
        let bad = ConfigOverrides {
            theta: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(
            engine.set_config("ann", bad),
            Err(EngineError::InvalidConfig(_))
        ));
        assert_eq!(engine.state("ann").unwrap().profile.history.len(), 1);
    }

    #[test]
    fn prediction_for_the_three_checkin_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (engine, _) = open(dir.path());
        engine
            .create_user("ann", ConfigOverrides::default())
            .unwrap();
        let fresh = engine.predict("ann", SnapshotSource::Auto(t(0)));
        assert!(matches!(
            fresh,
            Err(EngineError::Model(ModelError::NoHistoryFallbackImpossible))
        ));
        for (h, flat, temp) in [(0, 5, 10.0), (1, 9, 20.0), (2, 9, 40.0)] {
            engine
                .record_checkin("ann", c(h, flat, temp), None)
                .unwrap();
        }
        let snapshot = EnvSnapshot::empty(t(10)).with("temperature_c", 15.0);
        let p = engine
            .predict("ann", SnapshotSource::Explicit(snapshot))
            .unwrap();
        assert_eq!(p.top().flat(), 9);

        let auto = engine.predict("ann", SnapshotSource::Auto(t(10))).unwrap();
        assert!(auto.fallback);
        assert_eq!(auto.top().flat(), 9);
    }
}
