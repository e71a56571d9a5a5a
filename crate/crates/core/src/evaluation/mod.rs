//! Replay evaluation.
//!
//! Each user's history is replayed in time order. A row is scored with a
//! prediction built only from strictly earlier rows, and only afterwards is
//! the row revealed to the model as feedback. A prediction is correct when
//! any presented candidate is within the per-axis tolerance of the reported
//! cell.

pub mod baselines;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::Dataset;
use crate::emotion::{within_tolerance, DEFAULT_TOLERANCE};
use crate::error::ModelError;
use crate::factor::{CheckIn, EnvSnapshot, FactorRegistry};
use crate::personalization::process_feedback;
use crate::predictor::{predict_from, Prediction};
use crate::profile::{PersonalWeights, UserProfile};

pub use baselines::{baseline_frequency, baseline_knn, baseline_linreg, fit_linear_point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserSegment {
    Consistent,
    Inconsistent,
}

impl fmt::Display for UserSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UserSegment::Consistent => "consistent",
            UserSegment::Inconsistent => "inconsistent",
        })
    }
}

const CONSISTENT_RUN_DAYS: usize = 7;
const CONSISTENT_DAILY_MIN: usize = 2;

fn daily_counts(history: &[CheckIn]) -> BTreeMap<NaiveDate, usize> {
    let mut days = BTreeMap::new();
    for c in history {
        *days.entry(c.at.date_naive()).or_insert(0) += 1;
    }
    days
}

/// Labels a user by check-in habit, using UTC calendar days.
///
/// Consistent: seven consecutive days with at least two check-ins each.
/// Inconsistent: never more than one check-in a day and never on two
/// consecutive days. Histories matching neither are consistent when some day
/// has two or more check-ins and inconsistent otherwise.
pub fn segment_user(history: &[CheckIn]) -> UserSegment {
    let days = daily_counts(history);

    let mut run = 0usize;
    let mut prev: Option<NaiveDate> = None;
    for (&day, &n) in &days {
        if n >= CONSISTENT_DAILY_MIN {
            let continues = prev.is_some_and(|p| p + Duration::days(1) == day);
            run = if continues { run + 1 } else { 1 };
            prev = Some(day);
            if run >= CONSISTENT_RUN_DAYS {
                return UserSegment::Consistent;
            }
        } else {
            run = 0;
            prev = None;
        }
    }

    if days.values().any(|&n| n >= CONSISTENT_DAILY_MIN) {
        UserSegment::Consistent
    } else {
        UserSegment::Inconsistent
    }
}

/// True when the history satisfies the strict inconsistent definition.
pub fn is_strictly_inconsistent(history: &[CheckIn]) -> bool {
    let days = daily_counts(history);
    days.values().all(|&n| n <= 1)
        && days
            .keys()
            .zip(days.keys().skip(1))
            .all(|(a, b)| *a + Duration::days(1) != *b)
}

/// A predictor replayed one user at a time.
pub trait Forecaster {
    fn name(&self) -> &str;
    fn session(&self, user_id: &str) -> Box<dyn ForecastSession + '_>;
}

/// Per-user model state. `predict` sees only what `observe` has revealed.
pub trait ForecastSession {
    fn predict(&mut self, snapshot: &EnvSnapshot) -> Result<Prediction, ModelError>;
    fn observe(&mut self, checkin: &CheckIn) -> Result<(), ModelError>;
}

/// The personalized predictor with online feedback.
#[derive(Debug, Clone)]
pub struct MspscModel {
    pub registry: FactorRegistry,
    pub config: ModelConfig,
}

struct MspscSession<'a> {
    model: &'a MspscModel,
    profile: UserProfile,
}

impl Forecaster for MspscModel {
    fn name(&self) -> &str {
        "mspsc"
    }

    fn session(&self, user_id: &str) -> Box<dyn ForecastSession + '_> {
        Box::new(MspscSession {
            model: self,
            profile: UserProfile::new(user_id, &self.registry, self.config.w_init),
        })
    }
}

impl ForecastSession for MspscSession<'_> {
    fn predict(&mut self, snapshot: &EnvSnapshot) -> Result<Prediction, ModelError> {
        predict_from(
            &self.profile.history,
            &self.profile.weights,
            snapshot,
            &self.model.registry,
            &self.model.config,
        )
    }

    fn observe(&mut self, checkin: &CheckIn) -> Result<(), ModelError> {
        let mut checkin = checkin.clone();
        checkin.user_id.clone_from(&self.profile.user_id);
        process_feedback(
            &mut self.profile,
            checkin,
            &self.model.registry,
            &self.model.config,
        )
        .map(|_| ())
    }
}

/// The predictor without feedback: every factor keeps weight `w_init`.
#[derive(Debug, Clone)]
pub struct UnpersonalizedModel {
    pub registry: FactorRegistry,
    pub config: ModelConfig,
}

impl Forecaster for UnpersonalizedModel {
    fn name(&self) -> &str {
        "unpersonalized"
    }

    fn session(&self, _user_id: &str) -> Box<dyn ForecastSession + '_> {
        let weights = PersonalWeights::uniform(self.config.w_init);
        Box::new(HistorySession::new(
            move |history: &[CheckIn], snapshot: &EnvSnapshot| {
                predict_from(history, &weights, snapshot, &self.registry, &self.config)
            },
        ))
    }
}

/// Session that only accumulates history and predicts from it.
pub struct HistorySession<F> {
    history: Vec<CheckIn>,
    predict: F,
}

impl<F> HistorySession<F>
where
    F: FnMut(&[CheckIn], &EnvSnapshot) -> Result<Prediction, ModelError>,
{
    pub fn new(predict: F) -> Self {
        Self {
            history: Vec::new(),
            predict,
        }
    }
}

impl<F> ForecastSession for HistorySession<F>
where
    F: FnMut(&[CheckIn], &EnvSnapshot) -> Result<Prediction, ModelError>,
{
    fn predict(&mut self, snapshot: &EnvSnapshot) -> Result<Prediction, ModelError> {
        (self.predict)(&self.history, snapshot)
    }

    fn observe(&mut self, checkin: &CheckIn) -> Result<(), ModelError> {
        self.history.push(checkin.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrequencyBaseline;

impl Forecaster for FrequencyBaseline {
    fn name(&self) -> &str {
        "frequency"
    }

    fn session(&self, _user_id: &str) -> Box<dyn ForecastSession + '_> {
        Box::new(HistorySession::new(baseline_frequency))
    }
}

/// Falls back to the modal emotion while there is too little data.
fn or_frequency(
    result: Result<Prediction, ModelError>,
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
) -> Result<Prediction, ModelError> {
    match result {
        Err(ModelError::InsufficientData(_)) => {
            baseline_frequency(history, snapshot).map(|mut p| {
                p.fallback = true;
                p
            })
        }
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct KnnBaseline {
    pub registry: FactorRegistry,
    pub k: usize,
}

impl Forecaster for KnnBaseline {
    fn name(&self) -> &str {
        "knn"
    }

    fn session(&self, _user_id: &str) -> Box<dyn ForecastSession + '_> {
        Box::new(HistorySession::new(
            move |h: &[CheckIn], s: &EnvSnapshot| {
                or_frequency(baseline_knn(h, s, self.k, &self.registry), h, s)
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct LinRegBaseline {
    pub registry: FactorRegistry,
}

impl Forecaster for LinRegBaseline {
    fn name(&self) -> &str {
        "linreg"
    }

    fn session(&self, _user_id: &str) -> Box<dyn ForecastSession + '_> {
        Box::new(HistorySession::new(
            move |h: &[CheckIn], s: &EnvSnapshot| {
                or_frequency(baseline_linreg(h, s, &self.registry), h, s)
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mspsc,
    Frequency,
    Knn,
    Linreg,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Mspsc,
        ModelKind::Frequency,
        ModelKind::Knn,
        ModelKind::Linreg,
    ];

    pub fn build(&self, registry: &FactorRegistry, config: &ModelConfig) -> Box<dyn Forecaster> {
        match self {
            ModelKind::Mspsc => Box::new(MspscModel {
                registry: registry.clone(),
                config: *config,
            }),
            ModelKind::Frequency => Box::new(FrequencyBaseline),
            ModelKind::Knn => Box::new(KnnBaseline {
                registry: registry.clone(),
                k: config.k,
            }),
            ModelKind::Linreg => Box::new(LinRegBaseline {
                registry: registry.clone(),
            }),
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mspsc" => Ok(ModelKind::Mspsc),
            "frequency" => Ok(ModelKind::Frequency),
            "knn" => Ok(ModelKind::Knn),
            "linreg" => Ok(ModelKind::Linreg),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentFilter {
    #[default]
    All,
    Consistent,
    Inconsistent,
}

impl SegmentFilter {
    fn admits(&self, segment: UserSegment) -> bool {
        match self {
            SegmentFilter::All => true,
            SegmentFilter::Consistent => segment == UserSegment::Consistent,
            SegmentFilter::Inconsistent => segment == UserSegment::Inconsistent,
        }
    }
}

impl FromStr for SegmentFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SegmentFilter::All),
            "consistent" => Ok(SegmentFilter::Consistent),
            "inconsistent" => Ok(SegmentFilter::Inconsistent),
            other => Err(format!("unknown segment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub eps: f64,
    pub segment: SegmentFilter,
    /// Rows before this per-user index are replayed but not scored. The
    /// first row is never scored since nothing precedes it.
    pub warmup: usize,
    /// Score only the top candidate instead of every presented one.
    pub top_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_TOLERANCE,
            segment: SegmentFilter::All,
            warmup: 1,
            top_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBreakdown {
    pub user_id: String,
    pub segment: UserSegment,
    pub rows: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub segment: SegmentFilter,
    pub eps: f64,
    pub training_rows: usize,
    pub total_rows: usize,
    pub n_correct: usize,
    pub pct_correct: f64,
    pub avg_candidates_per_row: f64,
    pub avg_delta_energy: f64,
    pub avg_delta_attitude: f64,
    /// Rows where the model returned an error; scored as incorrect and left
    /// out of the delta averages.
    pub failed_rows: usize,
    pub per_user: Vec<UserBreakdown>,
}

impl EvalReport {
    /// Mean of per-user accuracies, for users with at least one scored row.
    pub fn pct_correct_per_user(&self) -> f64 {
        let scored: Vec<_> = self.per_user.iter().filter(|u| u.rows > 0).collect();
        if scored.is_empty() {
            return 0.0;
        }
        100.0
            * scored
                .iter()
                .map(|u| u.correct as f64 / u.rows as f64)
                .sum::<f64>()
            / scored.len() as f64
    }
}

#[derive(Default)]
struct Accumulator {
    rows: usize,
    correct: usize,
    candidates: usize,
    delta_energy: f64,
    delta_attitude: f64,
    delta_rows: usize,
    failed: usize,
}

/// Scores one prediction against the reported check-in. Deltas come from the
/// presented candidate closest to the actual cell.
fn score_row(acc: &mut Accumulator, prediction: &Prediction, actual: &CheckIn, opts: &EvalOptions) {
    let presented = if opts.top_only {
        &prediction.candidates[..prediction.candidates.len().min(1)]
    } else {
        &prediction.candidates[..]
    };
    let truth = actual.emotion.center();
    acc.rows += 1;
    acc.candidates += presented.len();
    if presented
        .iter()
        .any(|c| within_tolerance(c.cell.center(), truth, opts.eps))
    {
        acc.correct += 1;
    }
    let closest = presented.iter().min_by(|a, b| {
        truth
            .max_axis_distance(&a.cell.center())
            .total_cmp(&truth.max_axis_distance(&b.cell.center()))
    });
    if let Some(c) = closest {
        let center = c.cell.center();
        acc.delta_energy += truth.energy_delta(&center);
        acc.delta_attitude += truth.attitude_delta(&center);
        acc.delta_rows += 1;
    }
}

/// Replays every admitted user through `model` and aggregates per row.
pub fn evaluate(dataset: &Dataset, model: &dyn Forecaster, opts: &EvalOptions) -> EvalReport {
    let mut total = Accumulator::default();
    let mut training_rows = 0;
    let mut per_user = Vec::new();
    let first_scored = opts.warmup.max(1);

    for (user_id, history) in dataset.users() {
        let segment = segment_user(history);
        if !opts.segment.admits(segment) {
            continue;
        }
        let mut session = model.session(user_id);
        let mut user = Accumulator::default();
        for (i, checkin) in history.iter().enumerate() {
            if i >= first_scored {
                match session.predict(&checkin.env) {
                    Ok(p) if !p.candidates.is_empty() => score_row(&mut user, &p, checkin, opts),
                    _ => {
                        user.rows += 1;
                        user.failed += 1;
                    }
                }
            } else {
                training_rows += 1;
            }
            // a rejected row (e.g. out of order) is simply not learned from
            let _ = session.observe(checkin);
        }
        per_user.push(UserBreakdown {
            user_id: user_id.to_string(),
            segment,
            rows: user.rows,
            correct: user.correct,
        });
        total.rows += user.rows;
        total.correct += user.correct;
        total.candidates += user.candidates;
        total.delta_energy += user.delta_energy;
        total.delta_attitude += user.delta_attitude;
        total.delta_rows += user.delta_rows;
        total.failed += user.failed;
    }

    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    EvalReport {
        model: model.name().to_string(),
        segment: opts.segment,
        eps: opts.eps,
        training_rows,
        total_rows: total.rows,
        n_correct: total.correct,
        pct_correct: 100.0 * ratio(total.correct as f64, total.rows),
        avg_candidates_per_row: ratio(total.candidates as f64, total.rows - total.failed),
        avg_delta_energy: ratio(total.delta_energy, total.delta_rows),
        avg_delta_attitude: ratio(total.delta_attitude, total.delta_rows),
        failed_rows: total.failed,
        per_user,
    }
}

/// Renders a report as a one-row text table in the column order of the
/// usual comparison tables.
pub fn format_report_table(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "model           train_rows  test_rows  pct_correct  n_correct  avg_preds  delta_energy  delta_attitude\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{:<15} {:>10} {:>10} {:>12.2} {:>10} {:>10.2} {:>13.2} {:>15.2}\n",
            r.model,
            r.training_rows,
            r.total_rows,
            r.pct_correct,
            r.n_correct,
            r.avg_candidates_per_row,
            r.avg_delta_energy,
            r.avg_delta_attitude
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::GridIndex;
    use crate::factor::default_registry;
    use chrono::{DateTime, TimeZone, Utc};

    fn day(d: i64, hour: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 2, 1, hour, 0, 0).unwrap() + Duration::days(d)
    }

    fn at(times: &[DateTime<Utc>]) -> Vec<CheckIn> {
        times
            .iter()
            .map(|t| CheckIn::new("u", *t, GridIndex::from_flat(0).unwrap()))
            .collect()
    }

    #[test]
    fn segmentation_examples() {
        let twice_daily: Vec<_> = (0..7).flat_map(|d| [day(d, 9), day(d, 18)]).collect();
        assert_eq!(twice_daily.len(), 14);
        assert_eq!(segment_user(&at(&twice_daily)), UserSegment::Consistent);

        let sparse = at(&[day(1, 9), day(3, 9), day(5, 9)]);
        assert_eq!(segment_user(&sparse), UserSegment::Inconsistent);
        assert!(is_strictly_inconsistent(&sparse));

        assert_eq!(segment_user(&[]), UserSegment::Inconsistent);

        // consecutive single days match neither rule and have no double day
        let daily = at(&[day(1, 9), day(2, 9)]);
        assert!(!is_strictly_inconsistent(&daily));
        assert_eq!(segment_user(&daily), UserSegment::Inconsistent);

        // a six-day streak with a gap before the seventh day
        let mut broken: Vec<_> = (0..6).flat_map(|d| [day(d, 9), day(d, 18)]).collect();
        broken.extend([day(7, 9), day(7, 18)]);
        assert_eq!(segment_user(&at(&broken)), UserSegment::Consistent);
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!("knn".parse::<ModelKind>().unwrap(), ModelKind::Knn);
        assert!("xgboost".parse::<ModelKind>().is_err());
        assert_eq!(
            "inconsistent".parse::<SegmentFilter>().unwrap(),
            SegmentFilter::Inconsistent
        );
    }

    #[test]
    fn single_row_users_are_not_scored() {
        let ds = Dataset::from_checkins(vec![CheckIn::new(
            "solo",
            day(0, 9),
            GridIndex::from_flat(3).unwrap(),
        )])
        .unwrap();
        let r = evaluate(&ds, &FrequencyBaseline, &EvalOptions::default());
        assert_eq!(r.total_rows, 0);
        assert_eq!(r.training_rows, 1);
        assert_eq!(r.pct_correct, 0.0);
    }

    #[test]
    fn every_model_kind_runs() {
        let reg = default_registry();
        let checkins: Vec<CheckIn> = (0..10)
            .map(|i| {
                CheckIn::new(
                    "u",
                    day(i, 9),
                    GridIndex::from_flat((i * 7 % 64) as u8).unwrap(),
                )
                .with("temperature_c", i as f64)
            })
            .collect();
        let ds = Dataset::from_checkins(checkins).unwrap();
        for kind in ModelKind::ALL {
            let model = kind.build(&reg, &ModelConfig::default());
            let r = evaluate(&ds, model.as_ref(), &EvalOptions::default());
            assert_eq!(r.total_rows, 9, "{kind:?}");
            assert_eq!(r.failed_rows, 0, "{kind:?}");
            assert!(r.avg_candidates_per_row >= 1.0);
        }
    }
}
