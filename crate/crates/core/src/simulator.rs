//! Synthetic users with planted environmental sensitivities.
//!
//! Each user gets their own environment: weather varies within and across
//! days (a seasonal cycle, a multi-day weather cycle, a daily cycle, and
//! noise), calendar load depends on the weekday, and fitness signals follow
//! autocorrelated walks. The true mood is the base mood plus a linear (or
//! banded) response to normalized factor values plus Gaussian noise; the
//! reported emotion is the cell containing it.
//!
//! Separate random streams drive the environment, the schedule, the mood
//! noise, and the missingness draws, so changing the missingness settings
//! leaves the underlying trajectories and moods untouched.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::Dataset;
use crate::emotion::{nearest_cell, EmotionPoint};
use crate::error::DataError;
use crate::evaluation::{evaluate, EvalOptions, EvalReport, ModelKind};
use crate::factor::{CheckIn, EnvSnapshot, FactorRegistry, FactorValue, SourceGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckinPattern {
    /// Two check-ins every day.
    Consistent,
    /// At most one check-in a day, never on consecutive days.
    Inconsistent,
}

/// Per-axis response to one normalized factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisSensitivity {
    #[serde(default)]
    pub attitude: f64,
    #[serde(default)]
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    #[default]
    Linear,
    /// Normalized factor values are quantized to this many levels per unit
    /// before the sensitivity is applied.
    Banded(u32),
}

/// Probability that a source group is missing from a check-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Missingness {
    pub weather: f64,
    pub calendar: f64,
    pub fitness: f64,
}

impl Missingness {
    /// Complements of the availability shares 35.4% (weather), 10.5%
    /// (calendar) and 1.3% (fitness).
    pub const SPARSE: Missingness = Missingness {
        weather: 0.646,
        calendar: 0.895,
        fitness: 0.987,
    };

    pub const NONE: Missingness = Missingness {
        weather: 0.0,
        calendar: 0.0,
        fitness: 0.0,
    };

    pub fn for_group(&self, group: SourceGroup) -> f64 {
        match group {
            SourceGroup::Weather => self.weather,
            SourceGroup::Calendar => self.calendar,
            SourceGroup::Fitness => self.fitness,
        }
    }
}

impl Default for Missingness {
    fn default() -> Self {
        Self::SPARSE
    }
}

fn default_base_mood() -> EmotionPoint {
    EmotionPoint::new(50.0, 50.0).expect("midpoint is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: String,
    #[serde(default)]
    pub sensitivities: BTreeMap<String, AxisSensitivity>,
    #[serde(default = "default_base_mood")]
    pub base_mood: EmotionPoint,
    #[serde(default)]
    pub noise_sd: f64,
    pub checkin_pattern: CheckinPattern,
    #[serde(default)]
    pub missingness: Missingness,
    #[serde(default)]
    pub response: Response,
    #[serde(default)]
    pub seed: u64,
}

impl UserSpec {
    pub fn new(id: &str, pattern: CheckinPattern, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            sensitivities: BTreeMap::new(),
            base_mood: default_base_mood(),
            noise_sd: 0.0,
            checkin_pattern: pattern,
            missingness: Missingness::SPARSE,
            response: Response::Linear,
            seed,
        }
    }

    pub fn with_sensitivity(mut self, factor_id: &str, attitude: f64, energy: f64) -> Self {
        self.sensitivities
            .insert(factor_id.to_string(), AxisSensitivity { attitude, energy });
        self
    }

    pub fn with_missingness(mut self, missingness: Missingness) -> Self {
        self.missingness = missingness;
        self
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn validate(&self, registry: &FactorRegistry) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Scenario(format!("user `{}`: {msg}", self.id)));
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd must be a finite non-negative number".into());
        }
        for g in SourceGroup::ALL {
            let p = self.missingness.for_group(g);
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("missingness for {g} must lie in [0, 1]"));
            }
        }
        for id in self.sensitivities.keys() {
            if typical_range(id).is_none() {
                return bad(format!("no simulated signal for factor `{id}`"));
            }
            if registry.get(id).is_none() {
                return bad(format!("factor `{id}` is not in the registry"));
            }
        }
        if let Response::Banded(0) = self.response {
            return bad("banded response needs at least one level".into());
        }
        Ok(())
    }
}

/// Range over which a simulated factor is normalized to [-1, 1].
fn typical_range(factor_id: &str) -> Option<(f64, f64)> {
    Some(match factor_id {
        "temperature_c" => (-10.0, 35.0),
        "precipitation_mm" => (0.0, 20.0),
        "cloud_cover_pct" => (0.0, 100.0),
        "event_count_day" => (0.0, 10.0),
        "busy_hours_day" => (0.0, 12.0),
        "steps_day" => (0.0, 20_000.0),
        "sleep_hours" => (4.0, 10.0),
        "resting_hr" => (45.0, 85.0),
        _ => return None,
    })
}

fn normalized(factor_id: &str, value: f64) -> f64 {
    match typical_range(factor_id) {
        Some((lo, hi)) => 2.0 * (value - lo) / (hi - lo) - 1.0,
        None => 0.0,
    }
}

/// The day a simulated stream starts when none is given.
pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap()
}

const ENV_STREAM: u64 = 1;
const SCHEDULE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const MISSING_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes a scenario seed with a user index (splitmix64 finalizer).
pub fn derive_seed(scenario_seed: u64, index: u64) -> u64 {
    let mut z = scenario_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn schedule(
    pattern: CheckinPattern,
    days: u32,
    start: DateTime<Utc>,
    seed: u64,
) -> Vec<DateTime<Utc>> {
    let mut rng = stream(seed, SCHEDULE_STREAM);
    let midnight = start
        .date_naive()
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc();
    let mut times = Vec::new();
    let mut checked_yesterday = false;
    for d in 0..i64::from(days) {
        let day = midnight + Duration::days(d);
        match pattern {
            CheckinPattern::Consistent => {
                times.push(day + Duration::minutes(8 * 60 + rng.random_range(0..120)));
                times.push(day + Duration::minutes(18 * 60 + rng.random_range(0..180)));
            }
            CheckinPattern::Inconsistent => {
                let checks = !checked_yesterday && rng.random_bool(0.5);
                if checks {
                    times.push(day + Duration::minutes(9 * 60 + rng.random_range(0..360)));
                }
                checked_yesterday = checks;
            }
        }
    }
    times
}

struct DayState {
    events: f64,
    busy_hours: f64,
    steps: f64,
    sleep: f64,
    resting_hr: f64,
}

struct Environment {
    rng: ChaCha8Rng,
    season_phase: f64,
    cycle_phase: f64,
    cycle_days: f64,
    cloud_state: f64,
    day: Option<(i64, DayState)>,
    steps: f64,
    sleep: f64,
    resting_hr: f64,
}

impl Environment {
    fn new(seed: u64) -> Self {
        let mut rng = stream(seed, ENV_STREAM);
        let season_phase = rng.random_range(0.0..365.0);
        let cycle_phase = rng.random_range(0.0..10.0);
        let cycle_days = rng.random_range(6.0..12.0);
        Self {
            rng,
            season_phase,
            cycle_phase,
            cycle_days,
            cloud_state: 0.0,
            day: None,
            steps: 8000.0,
            sleep: 7.0,
            resting_hr: 62.0,
        }
    }

    fn day_state(&mut self, day_index: i64, weekday: Weekday) -> &DayState {
        if self.day.as_ref().map(|(d, _)| *d) != Some(day_index) {
            let rng = &mut self.rng;
            let weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
            let lambda = if weekend { 1.0 } else { 4.0 };
            let events: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
            let busy_hours: f64 = (0..events as u32)
                .map(|_| rng.random_range(0.5..2.0))
                .sum::<f64>()
                .min(16.0);
            let step_noise = Normal::new(0.0, 2000.0).expect("valid sd");
            let sleep_noise = Normal::new(0.0, 0.8).expect("valid sd");
            let hr_noise = Normal::new(0.0, 1.5).expect("valid sd");
            self.steps = (8000.0 + 0.6 * (self.steps - 8000.0) + step_noise.sample(rng))
                .clamp(0.0, 60_000.0);
            self.sleep =
                (7.0 + 0.5 * (self.sleep - 7.0) + sleep_noise.sample(rng)).clamp(3.0, 12.0);
            self.resting_hr =
                (62.0 + 0.8 * (self.resting_hr - 62.0) + hr_noise.sample(rng)).clamp(40.0, 100.0);
            self.day = Some((
                day_index,
                DayState {
                    events,
                    busy_hours,
                    steps: self.steps.round(),
                    sleep: (self.sleep * 10.0).round() / 10.0,
                    resting_hr: self.resting_hr.round(),
                },
            ));
        }
        &self.day.as_ref().expect("just set").1
    }

    /// Full environment at `at`, elapsed days counted from `start`.
    fn sample(&mut self, at: DateTime<Utc>, start: DateTime<Utc>) -> BTreeMap<String, FactorValue> {
        let elapsed = (at - start).num_seconds() as f64 / 86_400.0;
        let hour = f64::from(at.time().num_seconds_from_midnight()) / 3600.0;
        let temp_noise = Normal::new(0.0, 1.5).expect("valid sd");
        let cloud_noise = Normal::new(0.0, 1.0).expect("valid sd");

        let temperature = 12.0
            + 9.0 * (2.0 * PI * (elapsed + self.season_phase) / 365.0).sin()
            + 7.0 * (2.0 * PI * (elapsed + self.cycle_phase) / self.cycle_days).sin()
            + 3.0 * (2.0 * PI * (hour - 9.0) / 24.0).sin()
            + temp_noise.sample(&mut self.rng);
        self.cloud_state = 0.7 * self.cloud_state + cloud_noise.sample(&mut self.rng);
        let cloud = 100.0 / (1.0 + (-self.cloud_state).exp());
        let precipitation: f64 = if cloud > 70.0 && self.rng.random_bool(0.6) {
            Exp::new(1.0 / 3.0)
                .expect("positive rate")
                .sample(&mut self.rng)
        } else {
            0.0
        };
        let condition = if precipitation > 0.0 {
            if temperature < 1.0 {
                "snow"
            } else {
                "rain"
            }
        } else if cloud > 60.0 {
            "cloudy"
        } else {
            "clear"
        };

        let round1 = |v: f64| (v * 10.0).round() / 10.0;
        let mut values = BTreeMap::new();
        values.insert(
            "temperature_c".into(),
            FactorValue::Numeric(round1(temperature)),
        );
        values.insert(
            "cloud_cover_pct".into(),
            FactorValue::Numeric(round1(cloud)),
        );
        values.insert(
            "precipitation_mm".into(),
            FactorValue::Numeric(round1(precipitation.min(200.0))),
        );
        values.insert(
            "condition".into(),
            FactorValue::Categorical(condition.into()),
        );

        let day_index = elapsed.floor() as i64;
        let day = self.day_state(day_index, at.weekday());
        values.insert("event_count_day".into(), FactorValue::Numeric(day.events));
        values.insert(
            "busy_hours_day".into(),
            FactorValue::Numeric(round1(day.busy_hours)),
        );
        values.insert("steps_day".into(), FactorValue::Numeric(day.steps));
        values.insert("sleep_hours".into(), FactorValue::Numeric(day.sleep));
        values.insert("resting_hr".into(), FactorValue::Numeric(day.resting_hr));
        values
    }
}

/// The latent mood implied by a full environment, before noise.
pub fn planted_mood(spec: &UserSpec, env: &BTreeMap<String, FactorValue>) -> (f64, f64) {
    let mut attitude = spec.base_mood.attitude();
    let mut energy = spec.base_mood.energy();
    for (id, s) in &spec.sensitivities {
        let Some(v) = env.get(id).and_then(FactorValue::as_numeric) else {
            continue;
        };
        let mut x = normalized(id, v);
        if let Response::Banded(levels) = spec.response {
            let levels = f64::from(levels);
            x = (x * levels).round() / levels;
        }
        attitude += s.attitude * x;
        energy += s.energy * x;
    }
    (attitude, energy)
}

/// Generates one user's check-in stream over `days` days from `start`.
/// Identical inputs give identical streams.
pub fn generate_checkins(
    spec: &UserSpec,
    days: u32,
    start: DateTime<Utc>,
    registry: &FactorRegistry,
) -> Vec<CheckIn> {
    let times = schedule(spec.checkin_pattern, days, start, spec.seed);
    let mut env = Environment::new(spec.seed);
    let mut noise_rng = stream(spec.seed, NOISE_STREAM);
    let mut missing_rng = stream(spec.seed, MISSING_STREAM);
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).expect("validated sd");

    times
        .into_iter()
        .map(|at| {
            let full = env.sample(at, start);
            let (a, e) = planted_mood(spec, &full);
            let (na, ne) = (noise.sample(&mut noise_rng), noise.sample(&mut noise_rng));
            let emotion = nearest_cell(EmotionPoint::clamped(a + na, e + ne));

            let mut snapshot = EnvSnapshot::empty(at);
            // one draw per group per check-in, in a fixed order
            let dropped: Vec<SourceGroup> = SourceGroup::ALL
                .into_iter()
                .filter(|g| missing_rng.random_bool(spec.missingness.for_group(*g).clamp(0.0, 1.0)))
                .collect();
            for d in registry.descriptors() {
                if dropped.contains(&d.source_group) {
                    continue;
                }
                if let Some(v) = full.get(&d.factor_id) {
                    snapshot.values.insert(d.factor_id.clone(), Some(v.clone()));
                }
            }
            CheckIn {
                user_id: spec.id.clone(),
                at,
                emotion,
                env: snapshot,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub days: u32,
    pub start: DateTime<Utc>,
    pub users: Vec<UserSpec>,
    pub registry: FactorRegistry,
}

#[derive(Serialize, Deserialize)]
struct UserEntry {
    #[serde(flatten)]
    spec: UserSpec,
    #[serde(default)]
    replicas: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    #[serde(default)]
    seed: u64,
    days: u32,
    #[serde(default)]
    start: Option<DateTime<Utc>>,
    #[serde(default)]
    registry: Option<PathBuf>,
    #[serde(default, rename = "user")]
    users: Vec<UserEntry>,
}

impl Scenario {
    pub fn new(seed: u64, days: u32, users: Vec<UserSpec>) -> Self {
        Self {
            seed,
            days,
            start: default_start(),
            users,
            registry: FactorRegistry::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.days == 0 {
            return Err(DataError::Scenario("days must be at least 1".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for u in &self.users {
            u.validate(&self.registry)?;
            if !ids.insert(&u.id) {
                return Err(DataError::Scenario(format!("duplicate user id `{}`", u.id)));
            }
        }
        Ok(())
    }

    /// Parses a scenario document. A relative registry path resolves against
    /// `base_dir`. Users without a seed get one derived from the scenario
    /// seed and their position; `replicas = n` expands an entry into `n`
    /// users suffixed `-0`, `-1`, ...
    pub fn from_toml_str(doc: &str, base_dir: Option<&Path>) -> Result<Self, DataError> {
        let doc: ScenarioDoc = toml::from_str(doc)?;
        let registry = match doc.registry {
            Some(path) => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path,
                };
                FactorRegistry::load(path)?
            }
            None => FactorRegistry::default(),
        };
        let mut users = Vec::new();
        for entry in doc.users {
            match entry.replicas {
                None => users.push(entry.spec),
                Some(n) => {
                    for i in 0..n {
                        let mut spec = entry.spec.clone();
                        spec.id = format!("{}-{i}", entry.spec.id);
                        spec.seed = if entry.spec.seed == 0 {
                            0
                        } else {
                            derive_seed(entry.spec.seed, u64::from(i))
                        };
                        users.push(spec);
                    }
                }
            }
        }
        for (i, u) in users.iter_mut().enumerate() {
            if u.seed == 0 {
                u.seed = derive_seed(doc.seed, i as u64);
            }
        }
        let scenario = Scenario {
            seed: doc.seed,
            days: doc.days,
            start: doc.start.unwrap_or_else(default_start),
            users,
            registry,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn generate(&self) -> Dataset {
        let mut dataset = Dataset::new();
        for spec in &self.users {
            let history = generate_checkins(spec, self.days, self.start, &self.registry);
            dataset
                .insert_user(&spec.id, history)
                .expect("generated streams are strictly ordered");
        }
        dataset
    }
}

/// Generates the scenario's users and evaluates every requested model on
/// the same replay.
pub fn run_scenario(
    scenario: &Scenario,
    models: &[ModelKind],
    config: &ModelConfig,
    opts: &EvalOptions,
) -> Vec<EvalReport> {
    let dataset = scenario.generate();
    models
        .iter()
        .map(|kind| {
            let model = kind.build(&scenario.registry, config);
            evaluate(&dataset, model.as_ref(), opts)
        })
        .collect()
}
