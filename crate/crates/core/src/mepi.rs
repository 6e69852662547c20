//! Maximum relative error prediction intervals.
//!
//! The radius is the largest relative error of the last five scored
//! forecasts for the same county and horizon:
//!
//! ```text
//! delta = max_j |yhat_j - y_j| / yhat_j
//! upper = center * (1 + delta)
//! lower = max(last_obs, center * (1 - delta))
//! ```
//!
//! If the six relative errors (five past, one new) are exchangeable and
//! continuous, the new one is the largest with probability 1/6, so the
//! interval covers with probability 5/6.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CountyId, Day, Horizon};

/// Scored forecasts used for one interval.
pub const HISTORY_LEN: usize = 5;
/// Radius used before five scored forecasts exist.
pub const COLD_START_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MepiError {
    #[error("need {HISTORY_LEN} scored forecasts, have {0}")]
    InsufficientHistory(usize),
    #[error("scored forecast {0} has a non-positive prediction")]
    NonPositivePrediction(usize),
    #[error("interval center must be positive, got {0}")]
    NonPositiveCenter(f64),
    #[error("no actual for {county} on {day}")]
    MissingActual { county: CountyId, day: Day },
    #[error("no intervals to evaluate")]
    Empty,
}

/// A past forecast and the value that was later observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub predicted: f64,
    pub actual: f64,
}

impl ScoredPair {
    pub fn new(predicted: f64, actual: f64) -> Self {
        ScoredPair { predicted, actual }
    }

    fn relative_error(&self) -> f64 {
        (self.predicted - self.actual).abs() / self.predicted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub center: f64,
    pub delta: f64,
    pub lower: f64,
    pub upper: f64,
    /// Built from the cold-start or zero-prediction rule rather than five
    /// scored forecasts.
    pub provisional: bool,
}

impl Bounds {
    fn from_delta(center: f64, delta: f64, last_obs: f64, provisional: bool) -> Self {
        Bounds {
            center,
            delta,
            lower: last_obs.max(center * (1.0 - delta)),
            upper: center * (1.0 + delta),
            provisional,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub county: CountyId,
    pub as_of: Day,
    pub horizon: Horizon,
    #[serde(flatten)]
    pub bounds: Bounds,
}

impl Interval {
    pub fn target(&self) -> Day {
        self.as_of.offset(self.horizon.days() as i64)
    }
}

/// Interval from exactly the last five scored forecasts (older entries in
/// `history` are ignored).
pub fn mepi_interval(history: &[ScoredPair], center: f64, last_obs: f64) -> Result<Bounds, MepiError> {
    if history.len() < HISTORY_LEN {
        return Err(MepiError::InsufficientHistory(history.len()));
    }
    if center.is_nan() || center <= 0.0 {
        return Err(MepiError::NonPositiveCenter(center));
    }
    let recent = &history[history.len() - HISTORY_LEN..];
    let mut delta = 0.0f64;
    for (i, pair) in recent.iter().enumerate() {
        if pair.predicted.is_nan() || pair.predicted <= 0.0 {
            return Err(MepiError::NonPositivePrediction(i));
        }
        delta = delta.max(pair.relative_error());
    }
    Ok(Bounds::from_delta(center, delta, last_obs, false))
}

/// Interval for any county, including the cases [`mepi_interval`] rejects.
///
/// - center 0 (a county with no deaths and a flat forecast): `[0, 0]`.
/// - fewer than five scored forecasts: radius [`COLD_START_DELTA`],
///   provisional.
/// - a scored forecast of 0: counts as error 0 if the actual was also 0,
///   otherwise the radius is at least [`COLD_START_DELTA`] and the interval
///   is provisional.
pub fn interval_or_provisional(history: &[ScoredPair], center: f64, last_obs: f64) -> Bounds {
    if center.is_nan() || center <= 0.0 {
        let v = center.max(0.0);
        return Bounds { center: v, delta: 0.0, lower: v, upper: v, provisional: false };
    }
    if history.len() < HISTORY_LEN {
        return Bounds::from_delta(center, COLD_START_DELTA, last_obs, true);
    }
    let recent = &history[history.len() - HISTORY_LEN..];
    let mut delta = 0.0f64;
    let mut provisional = false;
    for pair in recent {
        if pair.predicted > 0.0 {
            delta = delta.max(pair.relative_error());
        } else if pair.actual > 0.0 {
            provisional = true;
        }
    }
    if provisional {
        delta = delta.max(COLD_START_DELTA);
    }
    Bounds::from_delta(center, delta, last_obs, provisional)
}

/// Covered and total counts of a set of intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub covered: u64,
    pub total: u64,
}

impl Coverage {
    pub fn record(&mut self, bounds: &Bounds, actual: f64) {
        self.total += 1;
        if bounds.contains(actual) {
            self.covered += 1;
        }
    }

    pub fn merge(&mut self, other: Coverage) {
        self.covered += other.covered;
        self.total += other.total;
    }

    /// `covered / total`; `None` when empty.
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.covered as f64 / self.total as f64)
    }
}

/// Fraction of intervals whose realised value, looked up by county and
/// target day, lies inside the bounds.
pub fn coverage(intervals: &[Interval], actuals: &BTreeMap<(CountyId, Day), f64>) -> Result<f64, MepiError> {
    let mut cov = Coverage::default();
    for iv in intervals {
        let day = iv.target();
        let actual = actuals
            .get(&(iv.county.clone(), day))
            .ok_or_else(|| MepiError::MissingActual { county: iv.county.clone(), day })?;
        cov.record(&iv.bounds, *actual);
    }
    cov.fraction().ok_or(MepiError::Empty)
}
