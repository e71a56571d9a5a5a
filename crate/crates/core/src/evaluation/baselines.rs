//! Reference predictors: modal emotion, k-nearest neighbours over numeric
//! factors, and per-axis least squares.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::emotion::{nearest_cell, EmotionPoint, GridIndex};
use crate::error::ModelError;
use crate::factor::{CheckIn, EnvSnapshot, FactorKind, FactorRegistry};
use crate::predictor::{modal_emotion, Candidate, Prediction};

/// Single candidate: the most frequent historical emotion.
pub fn baseline_frequency(
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
) -> Result<Prediction, ModelError> {
    let modal = modal_emotion(history)
        .ok_or_else(|| ModelError::InsufficientData("empty history".into()))?;
    let count = history.iter().filter(|c| c.emotion == modal).count();
    Ok(Prediction::single(
        modal,
        count as f64 / history.len() as f64,
        snapshot.captured_at,
    ))
}

fn numeric_ids(registry: &FactorRegistry) -> impl Iterator<Item = &str> {
    registry
        .descriptors()
        .iter()
        .filter(|d| d.kind == FactorKind::Numeric)
        .map(|d| d.factor_id.as_str())
}

fn numeric(c: &EnvSnapshot, id: &str) -> Option<f64> {
    c.get(id).and_then(|v| v.as_numeric())
}

/// Majority emotion among the `k` history rows closest to the snapshot.
///
/// Distance is the largest per-factor gap, each factor scaled by its observed
/// range. Missing values on either side are imputed with the factor's
/// historical mean. Factors never seen in the history are ignored.
pub fn baseline_knn(
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
    k: usize,
    registry: &FactorRegistry,
) -> Result<Prediction, ModelError> {
    if history.is_empty() {
        return Err(ModelError::InsufficientData("empty history".into()));
    }
    if k == 0 {
        return Err(ModelError::InsufficientData("k must be positive".into()));
    }

    struct Axis<'a> {
        id: &'a str,
        mean: f64,
        scale: f64,
        query: f64,
    }

    let mut axes = Vec::new();
    for id in numeric_ids(registry) {
        let seen: Vec<f64> = history.iter().filter_map(|c| numeric(&c.env, id)).collect();
        if seen.is_empty() {
            continue;
        }
        let mean = seen.iter().sum::<f64>() / seen.len() as f64;
        let query = numeric(snapshot, id).unwrap_or(mean);
        let (lo, hi) = seen
            .iter()
            .chain(std::iter::once(&query))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        axes.push(Axis {
            id,
            mean,
            scale: if span > 0.0 { span } else { 1.0 },
            query,
        });
    }

    let mut ranked: Vec<(f64, usize)> = history
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let d = axes
                .iter()
                .map(|a| (numeric(&c.env, a.id).unwrap_or(a.mean) - a.query).abs() / a.scale)
                .fold(0.0, f64::max);
            (d, t)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    ranked.truncate(k);

    // (votes, rank of the first voter)
    let mut votes: HashMap<GridIndex, (usize, usize)> = HashMap::new();
    for (rank, &(_, t)) in ranked.iter().enumerate() {
        let entry = votes.entry(history[t].emotion).or_insert((0, rank));
        entry.0 += 1;
    }
    let (cell, (count, _)) = votes
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("at least one neighbour");
    Ok(Prediction {
        candidates: vec![Candidate {
            cell,
            score: count as f64 / ranked.len() as f64,
        }],
        generated_at: snapshot.captured_at,
        factors_used: axes.iter().map(|a| a.id.to_string()).collect(),
        fallback: false,
    })
}

/// Least-squares fit of attitude and energy on the numeric factors present in
/// the snapshot, evaluated at the snapshot. Returns the raw fitted
/// `(attitude, energy)` before clamping.
pub fn fit_linear_point(
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
    registry: &FactorRegistry,
) -> Result<(f64, f64), ModelError> {
    let features: Vec<(&str, f64)> = numeric_ids(registry)
        .filter_map(|id| numeric(snapshot, id).map(|v| (id, v)))
        .collect();
    if features.is_empty() {
        return Err(ModelError::InsufficientData(
            "snapshot has no numeric factors".into(),
        ));
    }
    let rows: Vec<(Vec<f64>, EmotionPoint)> = history
        .iter()
        .filter_map(|c| {
            let xs: Option<Vec<f64>> = features.iter().map(|(id, _)| numeric(&c.env, id)).collect();
            xs.map(|xs| (xs, c.emotion.center()))
        })
        .collect();
    if rows.len() < 2 {
        return Err(ModelError::InsufficientData(format!(
            "{} complete rows, need 2",
            rows.len()
        )));
    }

    let n = rows.len();
    let p = features.len();
    // standardize columns for conditioning; constant columns collapse to 0
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    for j in 0..p {
        let col: Vec<f64> = rows.iter().map(|(xs, _)| xs[j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        scales[j] = if var > 0.0 { var.sqrt() } else { 0.0 };
    }
    let standardize = |j: usize, v: f64| {
        if scales[j] > 0.0 {
            (v - means[j]) / scales[j]
        } else {
            0.0
        }
    };

    let design = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            standardize(j - 1, rows[i].0[j - 1])
        }
    });
    let attitude = DVector::from_iterator(n, rows.iter().map(|(_, e)| e.attitude()));
    let energy = DVector::from_iterator(n, rows.iter().map(|(_, e)| e.energy()));
    let svd = design.svd(true, true);
    let solve = |y: &DVector<f64>| -> Result<DVector<f64>, ModelError> {
        svd.solve(y, 1e-10)
            .map_err(|e| ModelError::InsufficientData(e.to_string()))
    };
    let beta_a = solve(&attitude)?;
    let beta_e = solve(&energy)?;

    let mut query = Vec::with_capacity(p + 1);
    query.push(1.0);
    query.extend(
        features
            .iter()
            .enumerate()
            .map(|(j, (_, v))| standardize(j, *v)),
    );
    let query = DVector::from_vec(query);
    Ok((beta_a.dot(&query), beta_e.dot(&query)))
}

/// [`fit_linear_point`] snapped to the nearest cell.
pub fn baseline_linreg(
    history: &[CheckIn],
    snapshot: &EnvSnapshot,
    registry: &FactorRegistry,
) -> Result<Prediction, ModelError> {
    let (a, e) = fit_linear_point(history, snapshot, registry)?;
    let cell = nearest_cell(EmotionPoint::clamped(a, e));
    let mut prediction = Prediction::single(cell, 1.0, snapshot.captured_at);
    prediction.factors_used = numeric_ids(registry)
        .filter(|id| numeric(snapshot, id).is_some())
        .map(str::to_string)
        .collect();
    Ok(prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::default_registry;
    use chrono::{DateTime, Duration, TimeZone, Utc};

    fn cell(flat: u8) -> GridIndex {
        GridIndex::from_flat(flat).unwrap()
    }

    fn t(i: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap() + Duration::hours(i)
    }

    fn now() -> EnvSnapshot {
        EnvSnapshot::empty(t(100))
    }

    #[test]
    fn frequency_picks_the_mode() {
        let h: Vec<CheckIn> = [5u8, 9, 9]
            .iter()
            .enumerate()
            .map(|(i, e)| CheckIn::new("u", t(i as i64), cell(*e)))
            .collect();
        let p = baseline_frequency(&h, &now()).unwrap();
        assert_eq!(p.cells().collect::<Vec<_>>(), vec![cell(9)]);
        assert!(baseline_frequency(&[], &now()).is_err());
    }

    #[test]
    fn knn_exact_match_wins() {
        let reg = default_registry();
        let h = vec![
            CheckIn::new("u", t(0), cell(1))
                .with("temperature_c", 5.0)
                .with("sleep_hours", 6.0),
            CheckIn::new("u", t(1), cell(2))
                .with("temperature_c", 15.0)
                .with("sleep_hours", 8.0),
            CheckIn::new("u", t(2), cell(3)).with("temperature_c", 25.0),
        ];
        let q = now().with("temperature_c", 15.0).with("sleep_hours", 8.0);
        let p = baseline_knn(&h, &q, 1, &reg).unwrap();
        assert_eq!(p.top(), cell(2));

        // missing sleep on the query is imputed with the mean (7h)
        let q = now().with("temperature_c", 25.0);
        assert_eq!(baseline_knn(&h, &q, 1, &reg).unwrap().top(), cell(3));
    }

    #[test]
    fn knn_majority_over_k() {
        let reg = default_registry();
        let h = vec![
            CheckIn::new("u", t(0), cell(7)).with("steps_day", 1000.0),
            CheckIn::new("u", t(1), cell(7)).with("steps_day", 1200.0),
            CheckIn::new("u", t(2), cell(40)).with("steps_day", 1100.0),
            CheckIn::new("u", t(3), cell(40)).with("steps_day", 9000.0),
        ];
        let q = now().with("steps_day", 1100.0);
        assert_eq!(baseline_knn(&h, &q, 3, &reg).unwrap().top(), cell(7));
        assert_eq!(baseline_knn(&h, &q, 1, &reg).unwrap().top(), cell(40));
    }

    #[test]
    fn linreg_recovers_an_exact_line() {
        let reg = default_registry();
        // attitude center = 6.25 + 12.5·i at temperature 2·i
        let h: Vec<CheckIn> = (0..8u8)
            .map(|i| {
                CheckIn::new("u", t(i64::from(i)), GridIndex::new(i, 4).unwrap())
                    .with("temperature_c", 2.0 * f64::from(i))
            })
            .collect();
        let q = now().with("temperature_c", 7.0);
        let (a, e) = fit_linear_point(&h, &q, &reg).unwrap();
        assert!((a - 50.0).abs() < 1e-6, "{a}");
        assert!((e - 56.25).abs() < 1e-6, "{e}");
        let p = baseline_linreg(&h, &now().with("temperature_c", 10.0), &reg).unwrap();
        assert_eq!(p.top(), GridIndex::new(5, 4).unwrap());
    }

    #[test]
    fn linreg_needs_two_complete_rows() {
        let reg = default_registry();
        let h = vec![
            CheckIn::new("u", t(0), cell(1)).with("temperature_c", 5.0),
            CheckIn::new("u", t(1), cell(2)),
        ];
        let q = now().with("temperature_c", 6.0);
        assert!(matches!(
            baseline_linreg(&h, &q, &reg),
            Err(ModelError::InsufficientData(_))
        ));
        assert!(matches!(
            baseline_linreg(&h, &now(), &reg),
            Err(ModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn linreg_handles_more_features_than_rows() {
        let reg = default_registry();
        let h = vec![
            CheckIn::new("u", t(0), cell(1))
                .with("temperature_c", 5.0)
                .with("sleep_hours", 7.0)
                .with("steps_day", 3000.0),
            CheckIn::new("u", t(1), cell(62))
                .with("temperature_c", 25.0)
                .with("sleep_hours", 6.0)
                .with("steps_day", 3000.0),
        ];
        let q = now()
            .with("temperature_c", 20.0)
            .with("sleep_hours", 6.5)
            .with("steps_day", 3000.0);
        let (a, e) = fit_linear_point(&h, &q, &reg).unwrap();
        assert!(a.is_finite() && e.is_finite());
    }
}
