//! Day-by-day driver shared by backtests and the daily CLI run.
//!
//! On each origin day `t`, for every horizon `h`:
//!
//! 1. forecasts made at `t - h` are scored against day `t`'s counts: each
//!    baseline's tracking loss updates the county's ensemble weights, and
//!    the ensemble forecast joins the county's interval history;
//! 2. baselines are fitted on data up to `t` and combined with the current
//!    weights;
//! 3. an interval is built from the last five scored ensemble forecasts;
//! 4. the forecast is kept as pending until its target day arrives.
//!
//! The whole state serialises to JSON so a daily run can resume where the
//! previous one stopped.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clep::{update_weights_for, ClepError, CountyWeights, EnsembleConfig, EnsembleState};
use crate::exec::Execution;
use crate::mepi::{interval_or_provisional, Bounds, ScoredPair, HISTORY_LEN};
use crate::model::{CountyId, Day, Horizon, Panel};
use crate::predictors::{fit_all, Fallback, FitConfig, FitError, PredictorId};

/// A forecast due for scoring: county index, record, weights and history.
type DueItem<'a> = (usize, Option<&'a ForecastRecord>, Option<CountyWeights>, VecDeque<ScoredPair>);

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Clep(#[from] ClepError),
    #[error("no horizons configured")]
    NoHorizons,
    #[error("day {0} is outside the panel calendar")]
    OutOfRange(Day),
    #[error("state already processed {last}; cannot step to {requested}")]
    AlreadyProcessed { last: Day, requested: Day },
    #[error("state was built for a different panel calendar or configuration")]
    Incompatible,
    #[error("unsupported state version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub fit: FitConfig,
    pub ensemble: EnsembleConfig,
    pub horizons: Vec<Horizon>,
    pub predictors: Vec<PredictorId>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            fit: FitConfig::default(),
            ensemble: EnsembleConfig::default(),
            horizons: Horizon::CANONICAL.iter().map(|&h| Horizon::new(h).unwrap()).collect(),
            predictors: PredictorId::ALL.to_vec(),
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        self.fit.validate()?;
        self.ensemble.validate()?;
        if self.horizons.is_empty() {
            return Err(RunnerError::NoHorizons);
        }
        if self.predictors.is_empty() {
            return Err(ClepError::InvalidConfig("no predictors registered".into()).into());
        }
        Ok(())
    }
}

/// Everything produced for one county at one origin and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Baseline forecasts indexed by [`PredictorId::index`].
    pub components: [f64; 5],
    pub clep: f64,
    pub weights: Vec<f64>,
    pub last_obs: f64,
    pub interval: Bounds,
}

/// A pending forecast that has met its actual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredForecast {
    pub county: CountyId,
    pub origin: Day,
    pub horizon: Horizon,
    pub record: ForecastRecord,
    pub actual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HorizonTrack {
    pub ensemble: EnsembleState,
    /// Last scored (ensemble forecast, actual) pairs per county.
    pub history: BTreeMap<CountyId, VecDeque<ScoredPair>>,
    /// Forecasts awaiting their target day, by origin.
    pub pending: BTreeMap<Day, BTreeMap<CountyId, ForecastRecord>>,
}

/// Serialisable runner state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerState {
    pub version: u32,
    pub config: RunnerConfig,
    pub panel_start: Day,
    /// Last origin processed.
    pub last_day: Option<Day>,
    pub tracks: BTreeMap<Horizon, HorizonTrack>,
}

/// Output of one origin day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayOutput {
    pub origin: Option<Day>,
    pub forecasts: BTreeMap<Horizon, BTreeMap<CountyId, ForecastRecord>>,
    pub scored: Vec<ScoredForecast>,
    pub fallbacks: Vec<Fallback>,
    /// Largest `|sum(w) - 1|` after any weight update on this day.
    pub max_weight_sum_error: f64,
}

impl RunnerState {
    pub fn new(config: RunnerConfig, panel: &Panel) -> Result<Self, RunnerError> {
        config.validate()?;
        let tracks = config
            .horizons
            .iter()
            .map(|&h| {
                let track =
                    HorizonTrack { ensemble: EnsembleState::new(config.predictors.clone()), ..Default::default() };
                (h, track)
            })
            .collect();
        Ok(RunnerState { version: STATE_VERSION, config, panel_start: panel.start(), last_day: None, tracks })
    }

    /// Checks that a loaded state can continue on `panel` with `config`.
    pub fn check_compatible(&self, config: &RunnerConfig, panel: &Panel) -> Result<(), RunnerError> {
        if self.version != STATE_VERSION {
            return Err(RunnerError::UnsupportedVersion(self.version));
        }
        if &self.config != config || self.panel_start != panel.start() {
            return Err(RunnerError::Incompatible);
        }
        if let Some(last) = self.last_day {
            if panel.day_index(last).is_none() {
                return Err(RunnerError::Incompatible);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Next origin index to process.
    pub fn next_index(&self, panel: &Panel) -> usize {
        self.last_day.and_then(|d| panel.day_index(d)).map_or(0, |i| i + 1)
    }

    /// Processes every origin up to and including index `through`.
    pub fn run_through(
        &mut self,
        panel: &Panel,
        through: usize,
        exec: Execution,
        mut on_day: impl FnMut(&DayOutput),
    ) -> Result<(), RunnerError> {
        for t in self.next_index(panel)..=through {
            let out = self.step(panel, t, exec)?;
            on_day(&out);
        }
        Ok(())
    }

    /// Processes origin index `t`, which must be the next unprocessed day.
    pub fn step(&mut self, panel: &Panel, t: usize, exec: Execution) -> Result<DayOutput, RunnerError> {
        if t >= panel.days() {
            return Err(RunnerError::OutOfRange(panel.day(t)));
        }
        let today = panel.day(t);
        if let Some(last) = self.last_day {
            if today <= last {
                return Err(RunnerError::AlreadyProcessed { last, requested: today });
            }
        }
        let cfg = self.config.clone();
        let mut out = DayOutput { origin: Some(today), ..Default::default() };
        let counties: Vec<CountyId> = panel.counties().cloned().collect();
        let actual_today: Vec<f64> = counties.iter().map(|c| panel.deaths(c).unwrap()[t] as f64).collect();
        let fits = fit_all(panel, t, &cfg.fit, exec);
        out.fallbacks = fits.fallbacks.clone();

        for (&h, track) in self.tracks.iter_mut() {
            // 1. score forecasts whose target is today
            let origin = today.offset(-(h.days() as i64));
            if let Some(due) = track.pending.remove(&origin) {
                let items: Vec<DueItem> = counties
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        (
                            i,
                            due.get(c),
                            track.ensemble.counties.get(c).cloned(),
                            track.history.get(c).cloned().unwrap_or_default(),
                        )
                    })
                    .filter(|x| x.1.is_some())
                    .collect();
                let n = cfg.predictors.len();
                let results = exec.map(&items, |(i, rec, weights, hist)| {
                    let rec = rec.unwrap();
                    let y = actual_today[*i];
                    let losses: Vec<f64> =
                        cfg.predictors.iter().map(|p| cfg.ensemble.loss.eval(rec.components[p.index()], y)).collect();
                    let mut w = weights.clone().unwrap_or_else(|| CountyWeights::uniform(n));
                    let err = update_weights_for(&mut w, &losses, &cfg.ensemble, &cfg.predictors)?;
                    let mut hist = hist.clone();
                    hist.push_back(ScoredPair::new(rec.clep, y));
                    while hist.len() > HISTORY_LEN {
                        hist.pop_front();
                    }
                    Ok::<_, ClepError>((*i, w, hist, err))
                });
                for r in results {
                    let (i, w, hist, err) = r?;
                    let c = &counties[i];
                    out.max_weight_sum_error = out.max_weight_sum_error.max(err);
                    out.scored.push(ScoredForecast {
                        county: c.clone(),
                        origin,
                        horizon: h,
                        record: due[c].clone(),
                        actual: actual_today[i],
                    });
                    track.ensemble.counties.insert(c.clone(), w);
                    track.history.insert(c.clone(), hist);
                }
                track.ensemble.last_scored = Some(origin);
            }

            // 2-4. forecast from today
            let ensemble = &track.ensemble;
            let history = &track.history;
            let records = exec.map(&fits.counties, |fit| {
                let components = fit.forecast(h);
                let clep = ensemble.predict_one(&fit.county, &components);
                let hist: Vec<ScoredPair> =
                    history.get(&fit.county).map(|d| d.iter().copied().collect()).unwrap_or_default();
                ForecastRecord {
                    components,
                    clep,
                    weights: ensemble.weights(&fit.county),
                    last_obs: fit.last_obs,
                    interval: interval_or_provisional(&hist, clep, fit.last_obs),
                }
            });
            let records: BTreeMap<CountyId, ForecastRecord> =
                fits.counties.iter().map(|f| f.county.clone()).zip(records).collect();
            track.pending.insert(today, records.clone());
            out.forecasts.insert(h, records);
        }
        self.last_day = Some(today);
        Ok(out)
    }

    /// Forecasts made at `origin` that are still pending, per horizon.
    pub fn pending_at(&self, origin: Day) -> BTreeMap<Horizon, BTreeMap<CountyId, ForecastRecord>> {
        self.tracks.iter().filter_map(|(h, t)| t.pending.get(&origin).map(|r| (*h, r.clone()))).collect()
    }
}
