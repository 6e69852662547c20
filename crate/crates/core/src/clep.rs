//! Combined linear and exponential predictor.
//!
//! Each county keeps a discounted cumulative loss per baseline,
//!
//! ```text
//! L_m(t) = mu * L_m(t-1) + loss_m(t)
//! w_m(t) = exp(-c * L_m(t)) / sum_m' exp(-c * L_m'(t))
//! ```
//!
//! and the ensemble forecast is `sum_m w_m * yhat_m`. With `mu < 1` old
//! losses fade, so the weights follow whichever baseline has tracked the
//! county best lately: the linear fits in a linear regime, the exponential
//! fits in an exponential one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CountyId, Day, Horizon, Panel};
use crate::predictors::{predict_all, BaselineForecasts, FitConfig, PredictorId};

/// Days a state may lag behind the latest scoreable origin before
/// [`clep_predict`] refuses it.
pub const STALE_GRACE_DAYS: i32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClepError {
    #[error("non-finite loss for {0}")]
    NonFiniteLoss(PredictorId),
    #[error("expected {expected} losses, got {got}")]
    LossCount { expected: usize, got: usize },
    #[error("ensemble state last scored origin {last_scored} but forecasting at {as_of} for horizon {horizon} needs {needed} or later")]
    StaleState { last_scored: Day, as_of: Day, horizon: Horizon, needed: Day },
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("no baseline forecasts for {0}")]
    MissingBaseline(CountyId),
}

/// Pointwise loss used to score each baseline once its target day arrives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingLoss {
    /// `|yhat - y| / (y + 1)`.
    #[default]
    RelativeAbsolute,
    /// `|yhat - y|`.
    Absolute,
}

impl TrackingLoss {
    pub fn eval(self, predicted: f64, actual: f64) -> f64 {
        match self {
            TrackingLoss::RelativeAbsolute => (predicted - actual).abs() / (actual + 1.0),
            TrackingLoss::Absolute => (predicted - actual).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Forgetting factor in (0, 1].
    pub mu: f64,
    /// Sharpness, >= 0. Zero gives uniform weights.
    pub c: f64,
    pub loss: TrackingLoss,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { mu: 0.5, c: 1.0, loss: TrackingLoss::RelativeAbsolute }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), ClepError> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(ClepError::InvalidConfig(format!("mu must be in (0, 1], got {}", self.mu)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(ClepError::InvalidConfig(format!("c must be finite and >= 0, got {}", self.c)));
        }
        Ok(())
    }
}

/// Discounted losses and weights of one county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyWeights {
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    /// Number of updates applied.
    pub updates: u64,
}

impl CountyWeights {
    pub fn uniform(n: usize) -> Self {
        CountyWeights { losses: vec![0.0; n], weights: vec![1.0 / n as f64; n], updates: 0 }
    }
}

/// Applies one day's losses: `L <- mu L + loss`, then recomputes the
/// softmax weights with the minimum loss subtracted first.
///
/// Returns `|sum(w) - 1|` after the update.
pub fn update_weights(state: &mut CountyWeights, losses: &[f64], config: &EnsembleConfig) -> Result<f64, ClepError> {
    update_weights_for(state, losses, config, &PredictorId::ALL)
}

/// [`update_weights`] for an explicit predictor registry (used only to name
/// the offending predictor in errors).
pub fn update_weights_for(
    state: &mut CountyWeights,
    losses: &[f64],
    config: &EnsembleConfig,
    predictors: &[PredictorId],
) -> Result<f64, ClepError> {
    if losses.len() != state.losses.len() {
        return Err(ClepError::LossCount { expected: state.losses.len(), got: losses.len() });
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        let id = predictors.get(i).copied().unwrap_or(PredictorId::ALL[i % 5]);
        return Err(ClepError::NonFiniteLoss(id));
    }
    for (acc, l) in state.losses.iter_mut().zip(losses) {
        *acc = config.mu * *acc + l;
    }
    state.weights = softmax_weights(&state.losses, config.c);
    state.updates += 1;
    Ok((state.weights.iter().sum::<f64>() - 1.0).abs())
}

fn softmax_weights(losses: &[f64], c: f64) -> Vec<f64> {
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = losses.iter().map(|l| (-c * (l - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

/// Convex combination of `forecasts` by `weights`, kept inside
/// `[min, max]` of the forecasts.
pub fn combine(forecasts: &[f64], weights: &[f64]) -> f64 {
    let value: f64 = forecasts.iter().zip(weights).map(|(f, w)| f * w).sum();
    let lo = forecasts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = forecasts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    value.clamp(lo, hi)
}

/// Per-county weights of one horizon's ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub predictors: Vec<PredictorId>,
    pub counties: BTreeMap<CountyId, CountyWeights>,
    /// Origin day of the most recently scored forecast.
    pub last_scored: Option<Day>,
}

impl Default for EnsembleState {
    fn default() -> Self {
        Self::new(PredictorId::ALL.to_vec())
    }
}

impl EnsembleState {
    pub fn new(predictors: Vec<PredictorId>) -> Self {
        assert!(!predictors.is_empty(), "ensemble needs at least one predictor");
        EnsembleState { predictors, counties: BTreeMap::new(), last_scored: None }
    }

    /// Weights for `county`; uniform if it has never been scored.
    pub fn weights(&self, county: &CountyId) -> Vec<f64> {
        match self.counties.get(county) {
            Some(w) => w.weights.clone(),
            None => CountyWeights::uniform(self.predictors.len()).weights,
        }
    }

    pub fn county_mut(&mut self, county: &CountyId) -> &mut CountyWeights {
        let n = self.predictors.len();
        self.counties.entry(county.clone()).or_insert_with(|| CountyWeights::uniform(n))
    }

    /// Scores the forecasts made at `origin` against `actuals` and folds the
    /// losses into each county's weights.
    ///
    /// Returns the largest `|sum(w) - 1|` seen.
    pub fn score(
        &mut self,
        origin: Day,
        baselines: &BTreeMap<CountyId, [f64; 5]>,
        actuals: &BTreeMap<CountyId, f64>,
        config: &EnsembleConfig,
    ) -> Result<f64, ClepError> {
        let mut worst = 0.0f64;
        let predictors = self.predictors.clone();
        for (county, forecasts) in baselines {
            let Some(&y) = actuals.get(county) else { continue };
            let losses: Vec<f64> = predictors.iter().map(|p| config.loss.eval(forecasts[p.index()], y)).collect();
            let err = update_weights_for(self.county_mut(county), &losses, config, &predictors)?;
            worst = worst.max(err);
        }
        self.last_scored = Some(self.last_scored.map_or(origin, |d| d.max(origin)));
        Ok(worst)
    }

    /// Ensemble forecast for one county from its five baseline values.
    pub fn predict_one(&self, county: &CountyId, baselines: &[f64; 5]) -> f64 {
        let values: Vec<f64> = self.predictors.iter().map(|p| baselines[p.index()]).collect();
        combine(&values, &self.weights(county))
    }
}

/// Ensemble forecast of one county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClepForecast {
    pub county: CountyId,
    pub as_of: Day,
    pub horizon: Horizon,
    pub value: f64,
    pub weights: Vec<f64>,
}

/// Combines precomputed baselines with the state's weights.
pub fn combine_baselines(baselines: &BaselineForecasts, state: &EnsembleState) -> BTreeMap<CountyId, ClepForecast> {
    baselines
        .by_county
        .iter()
        .map(|(county, b)| {
            let f = ClepForecast {
                county: county.clone(),
                as_of: baselines.as_of,
                horizon: baselines.horizon,
                value: state.predict_one(county, b),
                weights: state.weights(county),
            };
            (county.clone(), f)
        })
        .collect()
}

/// Ensemble forecasts for every county at origin index `t`.
///
/// The state must have scored an origin no older than
/// `t - h - STALE_GRACE_DAYS`; a state that has never scored anything is a
/// cold start and uses uniform weights.
pub fn clep_predict(
    panel: &Panel,
    t: usize,
    horizon: Horizon,
    state: &EnsembleState,
    fit: &FitConfig,
) -> Result<BTreeMap<CountyId, ClepForecast>, ClepError> {
    let as_of = panel.day(t);
    if let Some(last) = state.last_scored {
        let needed = as_of.offset(-(horizon.days() as i64) - STALE_GRACE_DAYS as i64);
        if last < needed {
            return Err(ClepError::StaleState { last_scored: last, as_of, horizon, needed });
        }
    }
    Ok(combine_baselines(&predict_all(panel, t, horizon, fit), state))
}
