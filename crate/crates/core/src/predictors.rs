//! The five baseline forecasters.
//!
//! Every predictor looks at the last `k_fit` days of cumulative deaths up to
//! and including the forecast origin `t`, fits a trend, and extrapolates it
//! `h` days. Forecasts are clamped to the last observed count because
//! cumulative deaths cannot go down.
//!
//! | id | tag | model |
//! |----|-----|-------|
//! | `SeparateLinear` | p1 | per-county OLS line |
//! | `SeparateExp` | p2 | per-county OLS on `log(y + ε)` |
//! | `SharedExp` | p3 | one growth rate pooled over counties with ≥ 10 deaths, per-county level |
//! | `DemographicShared` | p4 | pooled `log(y + ε)` on time, log population, density and ICU beds per capita |
//! | `NeighborExp` | p5 | p2 plus `log(neighbour deaths + ε)` lagged by the horizon as a regressor |

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::lstsq;
use crate::model::{CountyId, Day, Horizon, Panel};

/// Counties need at least this many cumulative deaths at the origin to
/// contribute to the pooled growth rate.
pub const SHARED_MIN_DEATHS: u64 = 10;

pub const FEATURE_POPULATION: &str = "population";
pub const FEATURE_DENSITY: &str = "density";
pub const FEATURE_ICU_BEDS: &str = "icu_beds";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("degenerate window: {points} usable points, need {min_points}")]
    DegenerateWindow { points: usize, min_points: usize },
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredictorId {
    SeparateLinear,
    SeparateExp,
    SharedExp,
    DemographicShared,
    NeighborExp,
}

impl PredictorId {
    pub const ALL: [PredictorId; 5] = [
        PredictorId::SeparateLinear,
        PredictorId::SeparateExp,
        PredictorId::SharedExp,
        PredictorId::DemographicShared,
        PredictorId::NeighborExp,
    ];

    /// Short tag used in output files (`p1`..`p5`).
    pub fn tag(self) -> &'static str {
        match self {
            PredictorId::SeparateLinear => "p1",
            PredictorId::SeparateExp => "p2",
            PredictorId::SharedExp => "p3",
            PredictorId::DemographicShared => "p4",
            PredictorId::NeighborExp => "p5",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PredictorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Fit window in days.
    pub k_fit: usize,
    /// Shift added before taking logs.
    pub log_shift: f64,
    /// Fewer usable points than this and the county falls back to
    /// persistence.
    pub min_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { k_fit: 7, log_shift: 1.0, min_points: 3 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.min_points < 2 || self.k_fit < self.min_points {
            return Err(FitError::InvalidConfig(format!(
                "need k_fit >= min_points >= 2, got k_fit={} min_points={}",
                self.k_fit, self.min_points
            )));
        }
        if !(self.log_shift > 0.0 && self.log_shift.is_finite()) {
            return Err(FitError::InvalidConfig(format!("log_shift must be positive, got {}", self.log_shift)));
        }
        Ok(())
    }
}

/// A predictor's forecast of a county's cumulative deaths at `as_of + horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub predictor: PredictorId,
    pub county: CountyId,
    pub as_of: Day,
    pub horizon: Horizon,
    pub value: f64,
}

/// `y = intercept + slope * i` over window positions `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Window length the fit was made on.
    pub len: usize,
}

impl LinearFit {
    pub fn value_at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Value `h` steps past the last window position, clamped to `last_obs`.
    pub fn forecast(&self, h: usize, last_obs: f64) -> f64 {
        clamp_forecast(self.value_at(step(self.len, h)), last_obs)
    }
}

/// `log(y + shift) = level + growth_rate * i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub growth_rate: f64,
    pub level: f64,
    pub log_shift: f64,
    pub len: usize,
}

impl ExpFit {
    pub fn value_at(&self, x: f64) -> f64 {
        (self.level + self.growth_rate * x).exp() - self.log_shift
    }

    pub fn forecast(&self, h: usize, last_obs: f64) -> f64 {
        clamp_forecast(self.value_at(step(self.len, h)), last_obs)
    }
}

fn step(len: usize, h: usize) -> f64 {
    (len - 1 + h) as f64
}

fn clamp_forecast(raw: f64, last_obs: f64) -> f64 {
    if raw.is_finite() {
        raw.max(last_obs)
    } else {
        last_obs
    }
}

/// Ordinary least squares of the window on its positions `0..k`.
///
/// Non-finite entries are skipped; fewer than `min_points` remaining is a
/// [`FitError::DegenerateWindow`].
pub fn fit_linear(window: &[f64], min_points: usize) -> Result<LinearFit, FitError> {
    let pts: Vec<(f64, f64)> =
        window.iter().enumerate().filter(|(_, y)| y.is_finite()).map(|(i, &y)| (i as f64, y)).collect();
    let min_points = min_points.max(2);
    if pts.len() < min_points {
        return Err(FitError::DegenerateWindow { points: pts.len(), min_points });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    Ok(LinearFit { slope, intercept: my - slope * mx, len: window.len() })
}

/// Least squares of `log(y + log_shift)` on window positions.
pub fn fit_exponential(window: &[f64], log_shift: f64, min_points: usize) -> Result<ExpFit, FitError> {
    let logs: Vec<f64> =
        window.iter().map(|&y| if y + log_shift > 0.0 { (y + log_shift).ln() } else { f64::NAN }).collect();
    let lin = fit_linear(&logs, min_points)?;
    Ok(ExpFit { growth_rate: lin.slope, level: lin.intercept, log_shift, len: window.len() })
}

/// Why a county or predictor fell back to the last observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub county: Option<CountyId>,
    pub predictor: Option<PredictorId>,
    pub as_of: Day,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Trend {
    Persistence,
    Linear(LinearFit),
    Exp(ExpFit),
    Neighbor(Box<LaggedNeighbors>),
}

impl Trend {
    fn forecast(&self, h: usize, last_obs: f64) -> f64 {
        match self {
            Trend::Persistence => last_obs,
            Trend::Linear(f) => f.forecast(h, last_obs),
            Trend::Exp(f) => f.forecast(h, last_obs),
            Trend::Neighbor(n) => n.forecast(h, last_obs),
        }
    }
}

/// Days of neighbour history kept before the fit window.
const NEIGHBOR_LAG: usize = Horizon::MAX as usize;

/// `log(y_i + ε) = a + g i + b log(N_{i-h} + ε)` for horizon `h`, with `N`
/// the neighbour sum. The regressor at the target day is `N` at the
/// origin, so nothing is extrapolated.
#[derive(Debug, Clone, PartialEq)]
struct LaggedNeighbors {
    own: ExpFit,
    own_logs: Vec<f64>,
    /// `log(N + ε)` from `NEIGHBOR_LAG` days before the window to the origin.
    nb_logs: Vec<f64>,
}

impl LaggedNeighbors {
    fn forecast(&self, h: usize, last_obs: f64) -> f64 {
        let k = self.own_logs.len();
        if h > NEIGHBOR_LAG {
            return self.own.forecast(h, last_obs);
        }
        let z: Vec<f64> = (0..k).map(|i| self.nb_logs[NEIGHBOR_LAG + i - h]).collect();
        let cols = [vec![1.0; k], (0..k).map(|i| i as f64).collect(), z];
        let beta = lstsq::solve(&cols, &self.own_logs);
        let (Some(a), Some(g)) = (beta[0], beta[1]) else {
            return self.own.forecast(h, last_obs);
        };
        // a dropped regressor contributes nothing
        let b = beta[2].unwrap_or(0.0);
        let z_target = self.nb_logs[NEIGHBOR_LAG + k - 1];
        let log_y = a + g * step(k, h) + b * z_target;
        clamp_forecast(log_y.exp() - self.own.log_shift, last_obs)
    }
}

/// All five fitted models for one county at one origin.
#[derive(Debug, Clone)]
pub struct CountyFit {
    pub county: CountyId,
    pub last_obs: f64,
    trends: [Trend; 5],
}

impl CountyFit {
    pub fn forecast(&self, h: Horizon) -> [f64; 5] {
        self.trends.each_ref().map(|t| t.forecast(h.days(), self.last_obs))
    }
}

/// Fitted baselines for every county at origin `as_of`.
#[derive(Debug, Clone)]
pub struct BaselineFits {
    pub as_of: Day,
    pub counties: Vec<CountyFit>,
    pub fallbacks: Vec<Fallback>,
}

/// Forecasts of all five baselines for every county at one origin and
/// horizon, indexed by [`PredictorId::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineForecasts {
    pub as_of: Day,
    pub horizon: Horizon,
    pub by_county: BTreeMap<CountyId, [f64; 5]>,
    pub fallbacks: Vec<Fallback>,
}

impl BaselineForecasts {
    pub fn get(&self, predictor: PredictorId, county: &CountyId) -> Option<PointForecast> {
        self.by_county.get(county).map(|v| PointForecast {
            predictor,
            county: county.clone(),
            as_of: self.as_of,
            horizon: self.horizon,
            value: v[predictor.index()],
        })
    }

    pub fn to_map(&self) -> BTreeMap<(PredictorId, CountyId), PointForecast> {
        let mut out = BTreeMap::new();
        for county in self.by_county.keys() {
            for p in PredictorId::ALL {
                out.insert((p, county.clone()), self.get(p, county).expect("county present"));
            }
        }
        out
    }
}

impl BaselineFits {
    pub fn forecast(&self, horizon: Horizon) -> BaselineForecasts {
        BaselineForecasts {
            as_of: self.as_of,
            horizon,
            by_county: self.counties.iter().map(|c| (c.county.clone(), c.forecast(horizon))).collect(),
            fallbacks: self.fallbacks.clone(),
        }
    }
}

/// Five forecasts per county for origin index `t` and horizon `h`.
pub fn predict_all(panel: &Panel, t: usize, horizon: Horizon, config: &FitConfig) -> BaselineForecasts {
    fit_all(panel, t, config, Execution::default()).forecast(horizon)
}

/// Fits every baseline for every county using data up to and including day
/// index `t`. Nothing after `t` is read.
///
/// # Panics
///
/// If `t` is outside the panel calendar.
pub fn fit_all(panel: &Panel, t: usize, config: &FitConfig, exec: Execution) -> BaselineFits {
    assert!(t < panel.days(), "origin {t} outside panel of {} days", panel.days());
    let as_of = panel.day(t);
    let k = config.k_fit.min(t + 1);
    let shift = config.log_shift;
    let ids: Vec<&CountyId> = panel.counties().collect();
    let mut fallbacks = Vec::new();

    if k < config.min_points {
        fallbacks.push(Fallback {
            county: None,
            predictor: None,
            as_of,
            reason: format!("only {k} days of history, need {}", config.min_points),
        });
        let counties = ids
            .iter()
            .map(|c| {
                let last_obs = panel.deaths(c).unwrap()[t] as f64;
                CountyFit { county: (*c).clone(), last_obs, trends: std::array::from_fn(|_| Trend::Persistence) }
            })
            .collect();
        return BaselineFits { as_of, counties, fallbacks };
    }

    let windows: Vec<Vec<f64>> =
        ids.iter().map(|c| panel.deaths(c).unwrap()[t + 1 - k..=t].iter().map(|&v| v as f64).collect()).collect();
    let logs: Vec<Vec<f64>> = windows.iter().map(|w| w.iter().map(|y| (y + shift).ln()).collect()).collect();

    let shared = pooled_growth(&windows, &logs);
    if shared.is_none() {
        fallbacks.push(Fallback {
            county: None,
            predictor: Some(PredictorId::SharedExp),
            as_of,
            reason: format!("no county has at least {SHARED_MIN_DEATHS} deaths"),
        });
    }
    let demographic = DemographicModel::fit(panel, &ids, &logs, &mut fallbacks, as_of);

    let neighbor_logs: Vec<Option<Vec<f64>>> = ids
        .iter()
        .map(|c| {
            let mut nbrs = panel.neighbors(c).peekable();
            nbrs.peek()?;
            let len = k + NEIGHBOR_LAG;
            let mut sum = vec![0u64; len];
            for nb in nbrs {
                let d = panel.deaths(nb).unwrap();
                for (j, s) in sum.iter_mut().enumerate() {
                    // days before the panel start count as zero
                    if let Some(day) = (t + 1 + j).checked_sub(len) {
                        *s += d[day];
                    }
                }
            }
            Some(sum.into_iter().map(|v| (v as f64 + shift).ln()).collect())
        })
        .collect();

    let idx: Vec<usize> = (0..ids.len()).collect();
    let counties = exec.map(&idx, |&i| {
        let w = &windows[i];
        let last_obs = *w.last().unwrap();
        let linear = fit_linear(w, config.min_points).map(Trend::Linear).unwrap_or(Trend::Persistence);
        let own = fit_exponential(w, shift, config.min_points).ok();
        let exp = own.map(Trend::Exp).unwrap_or(Trend::Persistence);
        let shared_t = match shared {
            Some(g) => {
                let level = mean(&logs[i]) - g * (k as f64 - 1.0) / 2.0;
                Trend::Exp(ExpFit { growth_rate: g, level, log_shift: shift, len: k })
            }
            None => Trend::Persistence,
        };
        let demo_t = demographic.as_ref().map(|m| Trend::Exp(m.county_fit(i, shift, k))).unwrap_or(Trend::Persistence);
        let nb_t = match (&neighbor_logs[i], own) {
            (Some(nb), Some(own)) => {
                Trend::Neighbor(Box::new(LaggedNeighbors { own, own_logs: logs[i].clone(), nb_logs: nb.clone() }))
            }
            _ => exp.clone(),
        };
        CountyFit { county: ids[i].clone(), last_obs, trends: [linear, exp, shared_t, demo_t, nb_t] }
    });

    BaselineFits { as_of, counties, fallbacks }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Growth rate shared by all eligible counties: log-space OLS with a
/// separate intercept per county (within-county demeaning). Summed in
/// county order so the result does not depend on thread scheduling.
fn pooled_growth(windows: &[Vec<f64>], logs: &[Vec<f64>]) -> Option<f64> {
    let (mut sxx, mut sxy) = (0.0, 0.0);
    let mut any = false;
    for (w, z) in windows.iter().zip(logs) {
        if (*w.last().unwrap() as u64) < SHARED_MIN_DEATHS {
            continue;
        }
        any = true;
        let mx = (z.len() as f64 - 1.0) / 2.0;
        let mz = mean(z);
        for (i, zi) in z.iter().enumerate() {
            let dx = i as f64 - mx;
            sxx += dx * dx;
            sxy += dx * (zi - mz);
        }
    }
    (any && sxx > 0.0).then(|| sxy / sxx)
}

/// Pooled log-linear model on time and static county covariates.
struct DemographicModel {
    intercept: f64,
    time: f64,
    /// Per-county contribution of the static covariates.
    county_terms: Vec<f64>,
}

impl DemographicModel {
    fn fit(
        panel: &Panel,
        ids: &[&CountyId],
        logs: &[Vec<f64>],
        fallbacks: &mut Vec<Fallback>,
        as_of: Day,
    ) -> Option<Self> {
        let raw: Vec<[Option<f64>; 3]> = ids
            .iter()
            .map(|c| {
                let pop = panel.feature(c, FEATURE_POPULATION).filter(|p| *p > 0.0);
                let density = panel.feature(c, FEATURE_DENSITY);
                let icu = panel.feature(c, FEATURE_ICU_BEDS);
                [pop.map(f64::ln), density, pop.zip(icu).map(|(p, b)| b / p)]
            })
            .collect();
        // missing covariates take the mean over counties that have them
        let mut covariates = vec![[0.0; 3]; ids.len()];
        let mut imputed = 0usize;
        for j in 0..3 {
            let present: Vec<f64> = raw.iter().filter_map(|r| r[j]).filter(|v| v.is_finite()).collect();
            let fill = if present.is_empty() { 0.0 } else { mean(&present) };
            for (cov, r) in covariates.iter_mut().zip(&raw) {
                cov[j] = match r[j] {
                    Some(v) if v.is_finite() => v,
                    _ => {
                        imputed += 1;
                        fill
                    }
                };
            }
        }
        if imputed > 0 {
            fallbacks.push(Fallback {
                county: None,
                predictor: Some(PredictorId::DemographicShared),
                as_of,
                reason: format!("{imputed} missing covariate values replaced by the panel mean"),
            });
        }

        let k = logs.first()?.len();
        let n = ids.len() * k;
        let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
        let mut y = Vec::with_capacity(n);
        for (cov, z) in covariates.iter().zip(logs) {
            for (i, zi) in z.iter().enumerate() {
                cols[0].push(1.0);
                cols[1].push(i as f64);
                for j in 0..3 {
                    cols[2 + j].push(cov[j]);
                }
                y.push(*zi);
            }
        }
        let beta = lstsq::solve(&cols, &y);
        beta[0]?;
        let b = |j: usize| beta[j].unwrap_or(0.0);
        let county_terms = covariates.iter().map(|cov| (0..3).map(|j| b(2 + j) * cov[j]).sum()).collect();
        Some(DemographicModel { intercept: b(0), time: b(1), county_terms })
    }

    fn county_fit(&self, i: usize, log_shift: f64, len: usize) -> ExpFit {
        ExpFit { growth_rate: self.time, level: self.intercept + self.county_terms[i], log_shift, len }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DaySeries;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    /// Normal equations for `y = a + b x` solved by Cramer's rule.
    fn normal_equations(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        let a = (sy * sxx - sx * sxy) / det;
        let b = (n * sxy - sx * sy) / det;
        (a, b)
    }

    fn positions(k: usize) -> Vec<f64> {
        (0..k).map(|i| i as f64).collect()
    }

    #[test]
    fn linear_exact_line() {
        let f = fit_linear(&[10.0, 12.0, 14.0, 16.0], 3).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 10.0, epsilon = 1e-12);
        assert_relative_eq!(f.forecast(1, 16.0), 18.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_matches_normal_equations() {
        let y = [3.0, 4.0, 8.0, 9.0];
        let (a, b) = normal_equations(&positions(4), &y);
        assert_relative_eq!(a, 2.7, epsilon = 1e-12);
        assert_relative_eq!(b, 2.2, epsilon = 1e-12);
        let f = fit_linear(&y, 3).unwrap();
        assert_relative_eq!(f.slope, b, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, a, epsilon = 1e-12);
        assert_relative_eq!(f.forecast(1, 9.0), 11.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_constant_series() {
        let f = fit_linear(&[5.0; 4], 3).unwrap();
        assert_eq!(f.forecast(3, 5.0), 5.0);
    }

    #[test]
    fn linear_clamps_to_last_observation() {
        // falling fit still may not forecast below the last count
        let f = fit_linear(&[9.0, 9.0, 9.0, 1.0], 3).unwrap();
        assert!(f.slope < 0.0);
        assert_eq!(f.forecast(2, 9.0), 9.0);
    }

    #[test]
    fn degenerate_window() {
        assert_eq!(
            fit_linear(&[1.0, f64::NAN, f64::INFINITY], 2),
            Err(FitError::DegenerateWindow { points: 1, min_points: 2 })
        );
        assert!(fit_linear(&[1.0, 2.0], 3).is_err());
        // skipped entries keep their positions
        let f = fit_linear(&[0.0, f64::NAN, 4.0, 6.0], 3).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_shifted_geometric() {
        let f = fit_exponential(&[1.0, 3.0, 7.0, 15.0], 1.0, 3).unwrap();
        assert_relative_eq!(f.growth_rate, 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(f.forecast(1, 15.0), 31.0, epsilon = 1e-9);
    }

    #[test]
    fn exponential_constant() {
        let f = fit_exponential(&[5.0; 3], 1.0, 3).unwrap();
        for h in [1, 5, 14] {
            assert_relative_eq!(f.forecast(h, 5.0), 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn exponential_matches_log_space_normal_equations() {
        let y = [2.0, 5.0, 11.0, 20.0];
        let logs: Vec<f64> = y.iter().map(|v: &f64| (v + 1.0).ln()).collect();
        let (a, b) = normal_equations(&positions(4), &logs);
        let expected = (a + b * 5.0).exp() - 1.0;
        let f = fit_exponential(&y, 1.0, 3).unwrap();
        assert_relative_eq!(f.forecast(2, 20.0), expected, max_relative = 1e-12);
    }

    fn cid(s: &str) -> CountyId {
        CountyId::new(s).unwrap()
    }

    fn panel_of(rows: &[(&str, Vec<u64>)], ring: bool) -> Panel {
        let start = Day::parse("2020-03-01").unwrap();
        let series: Vec<DaySeries> = rows
            .iter()
            .map(|(c, d)| DaySeries { county: cid(c), start, cum_deaths: d.clone(), cum_cases: None })
            .collect();
        let mut adj = BTreeMap::new();
        if ring && rows.len() > 1 {
            for i in 0..rows.len() {
                let j = (i + 1) % rows.len();
                adj.entry(cid(rows[i].0)).or_insert_with(BTreeSet::new).insert(cid(rows[j].0));
                adj.entry(cid(rows[j].0)).or_insert_with(BTreeSet::new).insert(cid(rows[i].0));
            }
        }
        Panel::new(series, BTreeMap::new(), adj).unwrap()
    }

    #[test]
    fn single_linear_county() {
        let p = panel_of(&[("06001", (0..10).map(|i| 5 + 3 * i).collect())], false);
        let h = Horizon::new(5).unwrap();
        let f = predict_all(&p, 9, h, &FitConfig::default());
        let v = f.by_county[&cid("06001")];
        assert_relative_eq!(v[PredictorId::SeparateLinear.index()], (5 + 3 * 14) as f64, epsilon = 1e-9);
        for x in v {
            assert!(x.is_finite() && x >= 32.0);
        }
        assert_eq!(f.to_map().len(), 5);
    }

    #[test]
    fn all_zero_history_forecasts_zero() {
        let p = panel_of(&[("06001", vec![0; 10]), ("06003", vec![0; 10])], true);
        let f = predict_all(&p, 9, Horizon::new(7).unwrap(), &FitConfig::default());
        for v in f.by_county.values() {
            assert_eq!(v, &[0.0; 5]);
        }
    }

    #[test]
    fn short_history_falls_back_to_persistence() {
        let p = panel_of(&[("06001", vec![1, 4, 9])], false);
        let fits = fit_all(&p, 1, &FitConfig::default(), Execution::Sequential);
        assert_eq!(fits.counties[0].forecast(Horizon::new(5).unwrap()), [4.0; 5]);
        assert_eq!(fits.fallbacks.len(), 1);
    }

    /// Scalar oracles applied one county at a time.
    #[test]
    fn panel_matches_per_county_oracles() {
        let rows = [
            ("06001", vec![0, 1, 3, 6, 10, 15, 21, 28, 36, 45]),
            ("06003", vec![12, 14, 17, 19, 25, 30, 34, 40, 47, 51]),
            ("06005", vec![0, 0, 0, 0, 1, 1, 2, 4, 4, 7]),
        ];
        let p = panel_of(&rows, true);
        let cfg = FitConfig::default();
        let t = 9;
        let h = Horizon::new(5).unwrap();
        let out = predict_all(&p, t, h, &cfg);
        let x = (cfg.k_fit - 1 + 5) as f64;
        let xs = positions(cfg.k_fit);
        let mut pooled = (0.0, 0.0);
        for (c, d) in &rows {
            let w: Vec<f64> = d[t + 1 - cfg.k_fit..=t].iter().map(|&v| v as f64).collect();
            let last = *w.last().unwrap();
            let (a, b) = normal_equations(&xs, &w);
            let got = out.by_county[&cid(c)];
            assert_relative_eq!(got[0], (a + b * x).max(last), max_relative = 1e-10);
            let z: Vec<f64> = w.iter().map(|v| (v + 1.0).ln()).collect();
            let (a, b) = normal_equations(&xs, &z);
            assert_relative_eq!(got[1], ((a + b * x).exp() - 1.0).max(last), max_relative = 1e-10);
            if last >= 10.0 {
                let mz = z.iter().sum::<f64>() / z.len() as f64;
                for (i, zi) in z.iter().enumerate() {
                    pooled.0 += (i as f64 - 3.0) * (zi - mz);
                    pooled.1 += (i as f64 - 3.0).powi(2);
                }
            }
        }
        let g = pooled.0 / pooled.1;
        for (c, d) in &rows {
            let w: Vec<f64> = d[t + 1 - cfg.k_fit..=t].iter().map(|&v| v as f64).collect();
            let z: Vec<f64> = w.iter().map(|v| (v + 1.0).ln()).collect();
            let level = z.iter().sum::<f64>() / 7.0 - g * 3.0;
            let expected = ((level + g * x).exp() - 1.0).max(*w.last().unwrap());
            assert_relative_eq!(out.by_county[&cid(c)][2], expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn neighbor_term_used_when_informative() {
        let own: Vec<u64> = vec![1, 2, 2, 5, 6, 9, 15, 16, 24, 30];
        let nb: Vec<u64> = vec![3, 3, 8, 9, 20, 21, 22, 40, 41, 70];
        let p = panel_of(&[("06001", own), ("06003", nb)], true);
        let fits = fit_all(&p, 9, &FitConfig::default(), Execution::Sequential);
        assert!(matches!(fits.counties[0].trends[4], Trend::Neighbor(_)));
        let v = fits.counties[0].forecast(Horizon::new(3).unwrap());
        assert_ne!(v[4], v[1]);
        // no neighbours: p5 coincides with p2
        let p = panel_of(&[("06001", vec![1, 2, 2, 5, 6, 9, 15, 16, 24, 30])], false);
        let v = predict_all(&p, 9, Horizon::new(7).unwrap(), &FitConfig::default()).by_county[&cid("06001")];
        assert_eq!(v[4], v[1]);
    }

    /// 3x3 normal equations by Gaussian elimination.
    fn ols3(x: &[[f64; 3]], y: &[f64]) -> [f64; 3] {
        let mut m = [[0.0; 4]; 3];
        for (row, &yi) in x.iter().zip(y) {
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += row[a] * row[b];
                }
                m[a][3] += row[a] * yi;
            }
        }
        for c in 0..3 {
            let piv = (c..3).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, piv);
            let pivot = m[c];
            for (r, row) in m.iter_mut().enumerate() {
                if r != c {
                    let f = row[c] / pivot[c];
                    for (x, p) in row[c..].iter_mut().zip(&pivot[c..]) {
                        *x -= f * p;
                    }
                }
            }
        }
        [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
    }

    #[test]
    fn neighbor_model_matches_lagged_regression() {
        let own: Vec<u64> = vec![0, 1, 1, 2, 4, 5, 9, 12, 20, 26, 31, 45, 52, 70, 81, 99, 130, 141, 170, 201];
        let nb: Vec<u64> = vec![1, 2, 4, 4, 9, 13, 20, 22, 31, 44, 60, 61, 90, 101, 133, 150, 190, 240, 251, 300];
        let p = panel_of(&[("06001", own.clone()), ("06003", nb.clone())], true);
        let cfg = FitConfig::default();
        let (t, k) = (19, cfg.k_fit);
        for h in [1usize, 5, 7, 14] {
            let got = predict_all(&p, t, Horizon::new(h as u32).unwrap(), &cfg).by_county[&cid("06001")][4];
            let ln = |v: u64| (v as f64 + cfg.log_shift).ln();
            let lagged = |day: usize| day.checked_sub(h).map_or(0, |d| nb[d]);
            let rows: Vec<[f64; 3]> = (0..k).map(|i| [1.0, i as f64, ln(lagged(t + 1 - k + i))]).collect();
            let ys: Vec<f64> = (0..k).map(|i| ln(own[t + 1 - k + i])).collect();
            let [a, g, b] = ols3(&rows, &ys);
            let x = (k - 1 + h) as f64;
            let want = ((a + g * x + b * ln(nb[t])).exp() - cfg.log_shift).max(own[t] as f64);
            assert_relative_eq!(got, want, max_relative = 1e-9);
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let rows: Vec<(String, Vec<u64>)> = (0..40)
            .map(|i| {
                let d = (0..20u64).map(|t| (t * t * (i % 7 + 1)) / 3 + t * (i % 3)).collect();
                (format!("06{:03}", 2 * i + 1), d)
            })
            .collect();
        let refs: Vec<(&str, Vec<u64>)> = rows.iter().map(|(c, d)| (c.as_str(), d.clone())).collect();
        let p = panel_of(&refs, true);
        let h = Horizon::new(5).unwrap();
        let a = fit_all(&p, 15, &FitConfig::default(), Execution::Sequential).forecast(h);
        let b = fit_all(&p, 15, &FitConfig::default(), Execution::Parallel).forecast(h);
        for (x, y) in a.by_county.values().zip(b.by_county.values()) {
            for (u, v) in x.iter().zip(y) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { min_points: 1, ..Default::default() }.validate().is_err());
        assert!(FitConfig { k_fit: 2, ..Default::default() }.validate().is_err());
        assert!(FitConfig { log_shift: 0.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn linear_translation_covariance(
            y in prop::collection::vec(0.0f64..1e4, 3..12),
            c in -1e3f64..1e3,
        ) {
            let base = fit_linear(&y, 3).unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let moved = fit_linear(&shifted, 3).unwrap();
            prop_assert!((moved.slope - base.slope).abs() <= 1e-8 * (1.0 + base.slope.abs()));
            prop_assert!((moved.intercept - base.intercept - c).abs() <= 1e-7 * (1.0 + base.intercept.abs() + c.abs()));
        }

        #[test]
        fn forecasts_never_below_last(
            incs in prop::collection::vec(0u64..50, 4..20),
            h in 1u32..=21,
        ) {
            let mut d = Vec::new();
            let mut acc = 0;
            for i in incs { acc += i; d.push(acc); }
            let last = *d.last().unwrap() as f64;
            let t = d.len() - 1;
            let p = panel_of(&[("06001", d.clone()), ("06003", d.iter().map(|v| v * 2).collect())], true);
            let f = predict_all(&p, t, Horizon::new(h).unwrap(), &FitConfig::default());
            for v in f.by_county[&cid("06001")] {
                prop_assert!(v.is_finite() && v >= last);
            }
        }

        #[test]
        fn exact_recovery_on_noiseless_data(a in 0u64..500, b in 0u64..60, level in 1u64..20) {
            let lin: Vec<f64> = (0..7).map(|i| (a + b * i) as f64).collect();
            let f = fit_linear(&lin, 3).unwrap();
            prop_assert!((f.slope - b as f64).abs() <= 1e-8);
            prop_assert!((f.intercept - a as f64).abs() <= 1e-8);
            let geo: Vec<f64> = (0..7).map(|i| (level * 2u64.pow(i)) as f64 - 1.0).collect();
            let e = fit_exponential(&geo, 1.0, 3).unwrap();
            prop_assert!((e.growth_rate - 2f64.ln()).abs() <= 1e-8);
            let truth = (level * 2u64.pow(12)) as f64 - 1.0;
            prop_assert!((e.forecast(6, geo[6]) - truth).abs() <= 1e-8 * truth);
        }
    }
}
