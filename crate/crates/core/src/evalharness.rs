//! Rolling-origin backtests, loss functions and synthetic panels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::mepi::{mepi_interval, Coverage, ScoredPair, HISTORY_LEN};
use crate::model::{CountyId, Day, DaySeries, Horizon, Panel};
use crate::predictors::{FitConfig, PredictorId, FEATURE_DENSITY, FEATURE_ICU_BEDS, FEATURE_POPULATION};
use crate::runner::{RunnerConfig, RunnerError, RunnerState, ScoredForecast};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("backtest must start at day index {required} or later to warm up, got {start}")]
    InsufficientWarmup { start: usize, required: usize },
    #[error("backtest range {start}..={end} plus horizon {horizon} exceeds the panel ({days} days)")]
    OutOfRange { start: usize, end: usize, horizon: usize, days: usize },
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

/// Mean absolute error, root mean squared error and mean absolute
/// relative error with a +1 denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub mae: f64,
    pub rmse: f64,
    pub mare: f64,
}

impl Losses {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Mae => self.mae,
            LossKind::Rmse => self.rmse,
            LossKind::Mare => self.mare,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Rmse,
    Mare,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mae, LossKind::Rmse, LossKind::Mare];
}

/// Losses over `(prediction, actual)` pairs. Empty input scores zero.
pub fn losses(pairs: &[(f64, f64)]) -> Losses {
    if pairs.is_empty() {
        return Losses::default();
    }
    let n = pairs.len() as f64;
    let (mut abs, mut sq, mut rel) = (0.0, 0.0, 0.0);
    for &(p, y) in pairs {
        let e = (p - y).abs();
        abs += e;
        sq += e * e;
        rel += e / (y + 1.0);
    }
    Losses { mae: abs / n, rmse: (sq / n).sqrt(), mare: rel / n }
}

/// Days before the first origin a backtest may score: a full fit window,
/// then five scored full-window forecasts.
pub fn required_warmup(fit: &FitConfig, horizon: Horizon) -> usize {
    fit.k_fit + horizon.days() + HISTORY_LEN - 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    /// `p1`..`p5` or `clep`.
    pub model: String,
    pub horizon: Horizon,
    pub losses: Losses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: Horizon,
    pub scored: u64,
    pub coverage: Coverage,
    pub coverage_fraction: f64,
    /// Mean ensemble weight per registered predictor at the last origin.
    pub mean_weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub start: Day,
    pub end: Day,
    pub counties: usize,
    pub config: RunnerConfig,
    pub warmup_days: usize,
    pub scores: Vec<ScoreRow>,
    pub horizons: Vec<HorizonSummary>,
    pub max_weight_sum_error: f64,
}

impl BacktestReport {
    pub fn score(&self, model: &str, horizon: Horizon) -> Option<&Losses> {
        self.scores.iter().find(|r| r.model == model && r.horizon == horizon).map(|r| &r.losses)
    }

    pub fn summary(&self, horizon: Horizon) -> Option<&HorizonSummary> {
        self.horizons.iter().find(|s| s.horizon == horizon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Plain-text table of scores and coverage.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "backtest {} .. {}  counties={}  warmup={}d",
            self.start, self.end, self.counties, self.warmup_days
        );
        let _ = writeln!(s, "{:<6} {:>3} {:>14} {:>14} {:>10}", "model", "h", "mae", "rmse", "mare");
        for r in &self.scores {
            let _ = writeln!(
                s,
                "{:<6} {:>3} {:>14.4} {:>14.4} {:>10.4}",
                r.model, r.horizon, r.losses.mae, r.losses.rmse, r.losses.mare
            );
        }
        let _ = writeln!(s, "{:<6} {:>8} {:>10}  mean weights", "h", "scored", "coverage");
        for h in &self.horizons {
            let w: Vec<String> = h.mean_weights.iter().map(|(k, v)| format!("{k}={v:.3}")).collect();
            let _ = writeln!(s, "{:<6} {:>8} {:>10.4}  {}", h.horizon, h.scored, h.coverage_fraction, w.join(" "));
        }
        s
    }
}

/// Replays the panel from day 0 with fresh state and scores every forecast
/// issued at origins `start..=end` (day indices).
pub fn rolling_backtest(
    panel: &Panel,
    start: usize,
    end: usize,
    config: &RunnerConfig,
    exec: Execution,
) -> Result<BacktestReport, EvalError> {
    config.validate()?;
    let max_h = config.horizons.iter().copied().max().expect("validated");
    let required = required_warmup(&config.fit, max_h);
    if start < required {
        return Err(EvalError::InsufficientWarmup { start, required });
    }
    if start > end || end + max_h.days() >= panel.days() {
        return Err(EvalError::OutOfRange { start, end, horizon: max_h.days(), days: panel.days() });
    }
    let (first, last) = (panel.day(start), panel.day(end));
    let mut state = RunnerState::new(config.clone(), panel)?;
    let mut scored: Vec<ScoredForecast> = Vec::new();
    let mut max_err = 0.0f64;
    state.run_through(panel, end + max_h.days(), exec, |out| {
        max_err = max_err.max(out.max_weight_sum_error);
        scored.extend(out.scored.iter().filter(|s| s.origin >= first && s.origin <= last).cloned());
    })?;

    let mut scores = Vec::new();
    let mut horizons = Vec::new();
    for &h in &config.horizons {
        let of_h: Vec<&ScoredForecast> = scored.iter().filter(|s| s.horizon == h).collect();
        for p in &config.predictors {
            let pairs: Vec<(f64, f64)> = of_h.iter().map(|s| (s.record.components[p.index()], s.actual)).collect();
            scores.push(ScoreRow { model: p.tag().into(), horizon: h, losses: losses(&pairs) });
        }
        let pairs: Vec<(f64, f64)> = of_h.iter().map(|s| (s.record.clep, s.actual)).collect();
        scores.push(ScoreRow { model: "clep".into(), horizon: h, losses: losses(&pairs) });

        let mut coverage = Coverage::default();
        for s in &of_h {
            coverage.record(&s.record.interval, s.actual);
        }
        let ens = &state.tracks[&h].ensemble;
        let mut mean_weights = BTreeMap::new();
        for (j, p) in config.predictors.iter().enumerate() {
            let total: f64 = panel.counties().map(|c| ens.weights(c)[j]).sum();
            mean_weights.insert(p.tag().to_string(), total / panel.county_count() as f64);
        }
        horizons.push(HorizonSummary {
            horizon: h,
            scored: of_h.len() as u64,
            coverage,
            coverage_fraction: coverage.fraction().unwrap_or(0.0),
            mean_weights,
        });
    }

    Ok(BacktestReport {
        start: first,
        end: last,
        counties: panel.county_count(),
        config: config.clone(),
        warmup_days: required,
        scores,
        horizons,
        max_weight_sum_error: max_err,
    })
}

/// Values swept by [`grid_backtest`]; empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub mu: Vec<f64>,
    pub c: Vec<f64>,
    pub k_fit: Vec<usize>,
}

/// Runs one backtest per grid point. Configs are independent and run in
/// parallel under [`Execution::Parallel`].
pub fn grid_backtest(
    panel: &Panel,
    start: usize,
    end: usize,
    base: &RunnerConfig,
    grid: &Grid,
    exec: Execution,
) -> Vec<(RunnerConfig, Result<BacktestReport, EvalError>)> {
    let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
    let ks = if grid.k_fit.is_empty() { vec![base.fit.k_fit] } else { grid.k_fit.clone() };
    let mut configs = Vec::new();
    for &mu in &or_base(&grid.mu, base.ensemble.mu) {
        for &c in &or_base(&grid.c, base.ensemble.c) {
            for &k in &ks {
                let mut cfg = base.clone();
                cfg.ensemble.mu = mu;
                cfg.ensemble.c = c;
                cfg.fit.k_fit = k;
                configs.push(cfg);
            }
        }
    }
    let reports = exec.map(&configs, |cfg| rolling_backtest(panel, start, end, cfg, Execution::Sequential));
    configs.into_iter().zip(reports).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Linear,
    Exponential,
    Logistic,
    Switching,
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Regime::Linear),
            "exponential" => Ok(Regime::Exponential),
            "logistic" => Ok(Regime::Logistic),
            "switching" => Ok(Regime::Switching),
            _ => Err(format!("unknown regime {s:?}")),
        }
    }
}

/// Recipe for a synthetic panel.
///
/// - Linear: `a + b t`, integer `a` in 1..=50 and `b` in 1..=20.
/// - Exponential: `L r^t - 1`, integer `L` in 1..=20 and `r` drawn from
///   `growth`. With an integer ratio and `sigma = 0` the series is exactly
///   shifted-geometric.
/// - Logistic: `K / (1 + exp(-g (t - t0)))`.
/// - Switching: linear until a seeded day, exponential from there.
///
/// The curve is multiplied by `exp(sigma Z)` noise, then running-maxed and
/// floored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub regime: Regime,
    pub counties: usize,
    pub days: usize,
    pub sigma: f64,
    pub seed: u64,
    pub growth: (f64, f64),
    pub start: Day,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            regime: Regime::Switching,
            counties: 50,
            days: 60,
            sigma: 0.0,
            seed: 0,
            growth: (1.05, 1.2),
            start: Day::from_date(chrono::NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()),
        }
    }
}

/// Synthetic FIPS code for the `i`-th county: odd county numbers within
/// states 01, 02, ...
pub fn synthetic_fips(i: usize) -> CountyId {
    let state = 1 + i / 499;
    let county = 1 + 2 * (i % 499);
    CountyId::new(&format!("{state:02}{county:03}")).expect("fits state range for < 27,944 counties")
}

/// Generates a panel with ring adjacency and population, density and ICU
/// bed features. Same spec, same panel.
pub fn generate_synthetic(spec: &SynthSpec) -> Panel {
    assert!(spec.counties > 0 && spec.days > 0, "synthetic panel needs counties and days");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let days = spec.days;
    let mut series = Vec::with_capacity(spec.counties);
    let mut features = BTreeMap::new();
    for i in 0..spec.counties {
        let county = synthetic_fips(i);
        let curve: Vec<f64> = match spec.regime {
            Regime::Linear => {
                let a = rng.random_range(1..=50) as f64;
                let b = rng.random_range(1..=20) as f64;
                (0..days).map(|t| a + b * t as f64).collect()
            }
            Regime::Exponential => {
                let level = rng.random_range(1..=20) as f64;
                let r = draw(&mut rng, spec.growth);
                (0..days).map(|t| level * r.powi(t as i32) - 1.0).collect()
            }
            Regime::Logistic => {
                let k = rng.random_range(200..=5000) as f64;
                let g = rng.random_range(0.1..0.3);
                let mid = rng.random_range(days as f64 / 3.0..=2.0 * days as f64 / 3.0);
                (0..days).map(|t| k / (1.0 + (-g * (t as f64 - mid)).exp())).collect()
            }
            Regime::Switching => {
                let a = rng.random_range(1..=50) as f64;
                let b = rng.random_range(1..=20) as f64;
                let r = draw(&mut rng, spec.growth);
                let switch = rng.random_range(days / 4..=(3 * days / 4).max(days / 4));
                let at_switch = a + b * switch as f64;
                (0..days)
                    .map(|t| {
                        if t <= switch {
                            a + b * t as f64
                        } else {
                            (at_switch + 1.0) * r.powi((t - switch) as i32) - 1.0
                        }
                    })
                    .collect()
            }
        };
        let mut running = 0.0f64;
        let deaths: Vec<u64> = curve
            .iter()
            .map(|m| {
                let noisy = if spec.sigma > 0.0 { m * (spec.sigma * normal.sample(&mut rng)).exp() } else { *m };
                running = running.max(noisy);
                running.max(0.0).floor() as u64
            })
            .collect();
        let population = (10f64.powf(rng.random_range(4.0..6.3))).round();
        let area = rng.random_range(100.0..5000.0);
        let icu = (population * rng.random_range(1e-4..4e-4)).round();
        features.insert(
            county.clone(),
            BTreeMap::from([
                (FEATURE_POPULATION.to_string(), population),
                (FEATURE_DENSITY.to_string(), population / area),
                (FEATURE_ICU_BEDS.to_string(), icu),
            ]),
        );
        series.push(DaySeries { county, start: spec.start, cum_deaths: deaths, cum_cases: None });
    }
    let ids: Vec<CountyId> = series.iter().map(|s| s.county.clone()).collect();
    let mut adjacency: BTreeMap<CountyId, BTreeSet<CountyId>> = BTreeMap::new();
    if ids.len() > 1 {
        for i in 0..ids.len() {
            let j = (i + 1) % ids.len();
            adjacency.entry(ids[i].clone()).or_default().insert(ids[j].clone());
            adjacency.entry(ids[j].clone()).or_default().insert(ids[i].clone());
        }
    }
    Panel::new(series, features, adjacency).expect("synthetic panel is valid")
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Interval coverage when forecasts carry i.i.d. multiplicative log-normal
/// errors around the realised counts.
///
/// For every county and origin `t`, the forecast of day `t + h` is
/// `y[t + h] * exp(sigma Z)`. Once five earlier forecasts have been scored
/// (targets `<= t`), the interval from [`mepi_interval`] is checked against
/// `y[t + h]`. Counties need positive counts throughout.
pub fn exchangeable_coverage(panel: &Panel, horizon: Horizon, sigma: f64, seed: u64) -> Coverage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let h = horizon.days();
    let mut cov = Coverage::default();
    for s in panel.series() {
        let y: Vec<f64> = s.cum_deaths.iter().map(|&v| v as f64).collect();
        let origins = y.len().saturating_sub(h);
        let preds: Vec<f64> = (0..origins).map(|t| y[t + h] * noise.sample(&mut rng).exp()).collect();
        for t in 0..origins {
            // forecasts scored by day t were issued at origins <= t - h
            let Some(last_origin) = t.checked_sub(h) else { continue };
            if last_origin + 1 < HISTORY_LEN {
                continue;
            }
            let hist: Vec<ScoredPair> =
                (last_origin + 1 - HISTORY_LEN..=last_origin).map(|o| ScoredPair::new(preds[o], y[o + h])).collect();
            if let Ok(b) = mepi_interval(&hist, preds[t], y[t]) {
                cov.record(&b, y[t + h]);
            }
        }
    }
    cov
}

/// Tags of every model reported by a backtest, predictors first.
pub fn model_tags(config: &RunnerConfig) -> Vec<String> {
    config.predictors.iter().map(|p: &PredictorId| p.tag().to_string()).chain(["clep".to_string()]).collect()
}
