//! The 8×8 core-affect grid.
//!
//! Both axes run over `[0, 100]`. Attitude grows left to right (negative to
//! positive) and energy grows bottom to top. Each axis is split into eight
//! cells of pitch [`CELL_PITCH`], so the center of cell `i` sits at
//! `100·(2i+1)/16`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::EmotionError;

/// Number of cells along each axis.
pub const GRID_SIDE: u8 = 8;
/// Total number of selectable emotions.
pub const GRID_CELLS: usize = 64;
/// Upper bound of both axes.
pub const AXIS_MAX: f64 = 100.0;
/// Distance between neighbouring cell centers.
pub const CELL_PITCH: f64 = AXIS_MAX / GRID_SIDE as f64;
/// Per-axis tolerance used for both reward updates and accuracy scoring.
pub const DEFAULT_TOLERANCE: f64 = 13.0;

/// A point on the attitude × energy plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionPoint {
    attitude: f64,
    energy: f64,
}

impl EmotionPoint {
    pub fn new(attitude: f64, energy: f64) -> Result<Self, EmotionError> {
        for (axis, v) in [("attitude", attitude), ("energy", energy)] {
            if !v.is_finite() || !(0.0..=AXIS_MAX).contains(&v) {
                return Err(EmotionError::OutOfRange { axis, value: v });
            }
        }
        Ok(Self { attitude, energy })
    }

    /// Builds a point by clamping both coordinates into the axis range.
    /// Non-finite inputs collapse to the axis midpoint.
    pub fn clamped(attitude: f64, energy: f64) -> Self {
        let clamp = |v: f64| {
            if v.is_finite() {
                v.clamp(0.0, AXIS_MAX)
            } else {
                AXIS_MAX / 2.0
            }
        };
        Self {
            attitude: clamp(attitude),
            energy: clamp(energy),
        }
    }

    pub fn attitude(&self) -> f64 {
        self.attitude
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Largest of the two per-axis absolute differences.
    pub fn max_axis_distance(&self, other: &EmotionPoint) -> f64 {
        self.attitude_delta(other).max(self.energy_delta(other))
    }

    pub fn attitude_delta(&self, other: &EmotionPoint) -> f64 {
        (self.attitude - other.attitude).abs()
    }

    pub fn energy_delta(&self, other: &EmotionPoint) -> f64 {
        (self.energy - other.energy).abs()
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Serialize, Deserialize)]
struct PointRepr {
    attitude: f64,
    energy: f64,
}

impl Serialize for EmotionPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PointRepr {
            attitude: round2(self.attitude),
            energy: round2(self.energy),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmotionPoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PointRepr::deserialize(deserializer)?;
        EmotionPoint::new(repr.attitude, repr.energy).map_err(serde::de::Error::custom)
    }
}

/// One of the 64 grid cells. `col` indexes attitude, `row` indexes energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex {
    row: u8,
    col: u8,
}

impl GridIndex {
    pub fn new(col: u8, row: u8) -> Result<Self, EmotionError> {
        if col >= GRID_SIDE || row >= GRID_SIDE {
            return Err(EmotionError::InvalidCell { col, row });
        }
        Ok(Self { row, col })
    }

    /// Decodes the flat `row·8 + col` encoding.
    pub fn from_flat(flat: u8) -> Result<Self, EmotionError> {
        if usize::from(flat) >= GRID_CELLS {
            return Err(EmotionError::InvalidFlatIndex(flat));
        }
        Ok(Self {
            row: flat / GRID_SIDE,
            col: flat % GRID_SIDE,
        })
    }

    pub fn flat(&self) -> u8 {
        self.row * GRID_SIDE + self.col
    }

    pub fn col(&self) -> u8 {
        self.col
    }

    pub fn row(&self) -> u8 {
        self.row
    }

    /// All 64 cells in flat-index order.
    pub fn all() -> impl Iterator<Item = GridIndex> {
        (0..GRID_CELLS as u8).map(|f| GridIndex {
            row: f / GRID_SIDE,
            col: f % GRID_SIDE,
        })
    }

    pub fn center(&self) -> EmotionPoint {
        grid_center(*self)
    }
}

impl fmt::Display for GridIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.flat())
    }
}

impl Serialize for GridIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.flat())
    }
}

impl<'de> Deserialize<'de> for GridIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let flat = u8::deserialize(deserializer)?;
        GridIndex::from_flat(flat).map_err(serde::de::Error::custom)
    }
}

fn axis_center(i: u8) -> f64 {
    AXIS_MAX * f64::from(2 * i + 1) / 16.0
}

fn axis_cell(v: f64) -> u8 {
    let mut best = 0u8;
    let mut best_dist = f64::INFINITY;
    for i in 0..GRID_SIDE {
        let d = (v - axis_center(i)).abs();
        // strict comparison keeps the lower index on ties
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

pub fn grid_center(index: GridIndex) -> EmotionPoint {
    EmotionPoint {
        attitude: axis_center(index.col),
        energy: axis_center(index.row),
    }
}

/// Cell whose center minimizes the max-axis distance to `p`. The metric
/// separates per axis, so each coordinate is snapped independently.
pub fn nearest_cell(p: EmotionPoint) -> GridIndex {
    GridIndex {
        col: axis_cell(p.attitude),
        row: axis_cell(p.energy),
    }
}

/// True when both per-axis deltas are at most `eps`.
pub fn within_tolerance(a: EmotionPoint, b: EmotionPoint, eps: f64) -> bool {
    a.attitude_delta(&b) <= eps && a.energy_delta(&b) <= eps
}

/// [`within_tolerance`] on cell centers.
pub fn cells_within_tolerance(a: GridIndex, b: GridIndex, eps: f64) -> bool {
    within_tolerance(grid_center(a), grid_center(b), eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(a: f64, e: f64) -> EmotionPoint {
        EmotionPoint::new(a, e).unwrap()
    }

    fn cell(col: u8, row: u8) -> GridIndex {
        GridIndex::new(col, row).unwrap()
    }

    #[test]
    fn centers_follow_the_declared_formula() {
        assert_eq!(grid_center(cell(0, 0)), pt(6.25, 6.25));
        assert_eq!(grid_center(cell(7, 7)), pt(93.75, 93.75));
        let a = grid_center(cell(0, 7));
        let b = grid_center(cell(0, 6));
        assert_eq!(a.attitude(), b.attitude());
        assert_eq!(a.energy() - b.energy(), 12.5);
    }

    #[test]
    fn nearest_cell_examples() {
        assert_eq!(nearest_cell(pt(6.25, 6.25)), cell(0, 0));
        assert_eq!(nearest_cell(pt(100.0, 100.0)), cell(7, 7));
        assert_eq!(nearest_cell(pt(0.0, 0.0)), cell(0, 0));
        // 12.5 sits halfway between the centers 6.25 and 18.75
        assert_eq!(nearest_cell(pt(12.5, 6.25)), cell(0, 0));
        assert_eq!(nearest_cell(pt(12.5000001, 6.25)), cell(1, 0));
    }

    #[test]
    fn centers_round_trip_through_nearest_cell() {
        let mut seen = std::collections::HashSet::new();
        for g in GridIndex::all() {
            assert_eq!(nearest_cell(grid_center(g)), g);
            assert!(seen.insert(g.flat()));
        }
        assert_eq!(seen.len(), GRID_CELLS);
    }

    #[test]
    fn tolerance_examples() {
        assert!(within_tolerance(pt(50.0, 50.0), pt(60.0, 60.0), 13.0));
        assert!(!within_tolerance(pt(50.0, 50.0), pt(70.0, 50.0), 13.0));
        assert!(within_tolerance(pt(33.0, 71.0), pt(33.0, 71.0), 0.0));
    }

    #[test]
    fn adjacent_cells_count_and_two_apart_do_not() {
        for g in GridIndex::all() {
            for h in GridIndex::all() {
                let dc = g.col().abs_diff(h.col());
                let dr = g.row().abs_diff(h.row());
                assert_eq!(
                    cells_within_tolerance(g, h, DEFAULT_TOLERANCE),
                    dc <= 1 && dr <= 1,
                    "{g} vs {h}"
                );
            }
        }
    }

    #[test]
    fn flat_encoding() {
        assert_eq!(cell(3, 2).flat(), 19);
        assert_eq!(GridIndex::from_flat(19).unwrap(), cell(3, 2));
        assert!(GridIndex::from_flat(64).is_err());
        assert!(GridIndex::new(8, 0).is_err());
        assert_eq!(serde_json::to_string(&cell(1, 7)).unwrap(), "57");
        let back: GridIndex = serde_json::from_str("57").unwrap();
        assert_eq!(back, cell(1, 7));
        assert!(serde_json::from_str::<GridIndex>("64").is_err());
    }

    #[test]
    fn point_validation_and_serialization() {
        assert!(EmotionPoint::new(-0.1, 5.0).is_err());
        assert!(EmotionPoint::new(5.0, f64::NAN).is_err());
        assert!(EmotionPoint::new(100.0, 0.0).is_ok());
        let p = pt(33.33333, 6.255);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"attitude":33.33,"energy":6.26}"#);
        assert!(serde_json::from_str::<EmotionPoint>(r#"{"attitude":101,"energy":1}"#).is_err());
    }

    #[test]
    fn clamped_points() {
        let p = EmotionPoint::clamped(-20.0, 140.0);
        assert_eq!(p, pt(0.0, 100.0));
        assert_eq!(EmotionPoint::clamped(f64::NAN, 1.0), pt(50.0, 1.0));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn any_point() -> impl Strategy<Value = EmotionPoint> {
            (0.0..=100.0f64, 0.0..=100.0f64).prop_map(|(a, e)| EmotionPoint::new(a, e).unwrap())
        }

        proptest! {
            #[test]
            fn tolerance_is_symmetric_and_monotone(a in any_point(), b in any_point(), e1 in 0.0..60.0f64, e2 in 0.0..60.0f64) {
                prop_assert_eq!(within_tolerance(a, b, e1), within_tolerance(b, a, e1));
                let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
                if within_tolerance(a, b, lo) {
                    prop_assert!(within_tolerance(a, b, hi));
                }
            }

            #[test]
            fn nearest_cell_minimizes_max_axis_distance(p in any_point()) {
                let chosen = nearest_cell(p);
                let d = p.max_axis_distance(&grid_center(chosen));
                for g in GridIndex::all() {
                    prop_assert!(d <= p.max_axis_distance(&grid_center(g)) + 1e-12);
                }
                prop_assert!(p.attitude_delta(&grid_center(chosen)) <= CELL_PITCH / 2.0 + 1e-12);
                prop_assert!(p.energy_delta(&grid_center(chosen)) <= CELL_PITCH / 2.0 + 1e-12);
            }
        }
    }
}
