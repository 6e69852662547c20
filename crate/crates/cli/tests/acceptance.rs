//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use clep_core::clep::EnsembleConfig;
use clep_core::evalharness::{exchangeable_coverage, generate_synthetic, rolling_backtest, Regime, SynthSpec};
use clep_core::exec::Execution;
use clep_core::model::{validate_cumulative, MonotoneFixPolicy};
use clep_core::predictors::{fit_exponential, fit_linear};
use clep_core::runner::{ForecastRecord, RunnerConfig, RunnerState};
use clep_core::severity::impute_hospital;
use clep_core::{CountyId, DaySeries, FitConfig, Horizon, Panel, PredictorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_clep-forecast");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn h(days: u32) -> Horizon {
    Horizon::new(days).unwrap()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Interval coverage with exchangeable forecast errors, 5 days ahead.
fn ac1() -> Outcome {
    let t0 = Instant::now();
    let panel = generate_synthetic(&SynthSpec {
        regime: Regime::Linear,
        counties: 1000,
        days: 40,
        sigma: 0.0,
        seed: 20200301,
        ..Default::default()
    });
    let cov = exchangeable_coverage(&panel, h(5), 0.2, 11);
    let frac = cov.fraction().unwrap_or(0.0);
    let took = t0.elapsed();
    outcome(
        (0.78..=0.88).contains(&frac) && took < Duration::from_secs(60),
        format!("coverage {frac:.4} over {} intervals (target 5/6 = 0.8333), {:.2}s", cov.total, secs(took)),
    )
}

/// Pipeline coverage on a noisy switching panel, reported for reference.
fn info_pipeline_coverage() -> String {
    let panel =
        generate_synthetic(&SynthSpec { counties: 1000, days: 40, sigma: 0.1, seed: 20200301, ..Default::default() });
    let cfg = RunnerConfig { horizons: vec![h(5)], ..Default::default() };
    match rolling_backtest(&panel, 15, 34, &cfg, Execution::default()) {
        Ok(r) => {
            let s = r.summary(h(5)).unwrap();
            format!(
                "full CLEP+MEPI pipeline, switching regime, sigma 0.1: coverage {:.4} over {} intervals",
                s.coverage_fraction, s.scored
            )
        }
        Err(e) => format!("pipeline coverage unavailable: {e}"),
    }
}

/// Runs until five forecasts from full fit windows have been scored and
/// returns each county's (linear, exponential) weight.
fn weights_after_five(panel: &Panel) -> Vec<(f64, f64)> {
    let cfg = RunnerConfig { horizons: vec![h(5)], ..Default::default() };
    let first_full = cfg.fit.k_fit - 1;
    let mut state = RunnerState::new(cfg.clone(), panel).unwrap();
    state.run_through(panel, first_full + 4 + 5, Execution::default(), |_| {}).unwrap();
    let ens = &state.tracks[&h(5)].ensemble;
    let (i1, i2) = (PredictorId::SeparateLinear.index(), PredictorId::SeparateExp.index());
    panel.counties().map(|c| (ens.weights(c)[i1], ens.weights(c)[i2])).collect()
}

fn ac2() -> Outcome {
    let t0 = Instant::now();
    let linear = generate_synthetic(&SynthSpec {
        regime: Regime::Linear,
        counties: 100,
        days: 30,
        sigma: 0.0,
        seed: 5,
        ..Default::default()
    });
    let geometric = generate_synthetic(&SynthSpec {
        regime: Regime::Exponential,
        counties: 100,
        days: 30,
        sigma: 0.0,
        seed: 6,
        growth: (2.0, 2.0),
        ..Default::default()
    });
    let lin_ok = weights_after_five(&linear).iter().filter(|(l, e)| l > e).count();
    let geo_ok = weights_after_five(&geometric).iter().filter(|(l, e)| e > l).count();
    let took = t0.elapsed();
    outcome(
        lin_ok == 100 && geo_ok == 100 && took < Duration::from_secs(5),
        format!(
            "linear panel: p1 > p2 in {lin_ok}/100 counties; geometric panel: p2 > p1 in {geo_ok}/100; {:.2}s",
            secs(took)
        ),
    )
}

fn random_config(rng: &mut ChaCha8Rng) -> RunnerConfig {
    let all = [1u32, 3, 5, 7, 14];
    let horizons: BTreeSet<u32> = (0..rng.random_range(1..=3)).map(|_| all[rng.random_range(0..all.len())]).collect();
    RunnerConfig {
        fit: FitConfig { k_fit: rng.random_range(3..=10), log_shift: rng.random_range(0.5..2.0), min_points: 3 },
        ensemble: EnsembleConfig {
            mu: rng.random_range(0.05..=1.0),
            c: rng.random_range(0.0..5.0),
            ..Default::default()
        },
        horizons: horizons.into_iter().map(h).collect(),
        predictors: PredictorId::ALL.to_vec(),
    }
}

fn random_panel(rng: &mut ChaCha8Rng) -> Panel {
    let regimes = [Regime::Linear, Regime::Exponential, Regime::Logistic, Regime::Switching];
    generate_synthetic(&SynthSpec {
        regime: regimes[rng.random_range(0..4)],
        counties: rng.random_range(2..=8),
        days: rng.random_range(20..=40),
        sigma: rng.random_range(0.0..0.3),
        seed: rng.random(),
        growth: (1.01, rng.random_range(1.02..1.4)),
        ..Default::default()
    })
}

/// Convexity (AC3) and weight normalisation (AC4) over the same fuzz runs.
fn ac3_ac4() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let runs = 1000;
    let (mut checked, mut violations) = (0u64, 0u64);
    let (mut updates_max, mut weights_max) = (0.0f64, 0.0f64);
    for _ in 0..runs {
        let panel = random_panel(&mut rng);
        let cfg = random_config(&mut rng);
        let mut state = RunnerState::new(cfg, &panel).unwrap();
        state
            .run_through(&panel, panel.days() - 1, Execution::Sequential, |out| {
                updates_max = updates_max.max(out.max_weight_sum_error);
                for r in out.forecasts.values().flat_map(|m| m.values()) {
                    checked += 1;
                    let lo = r.components.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = r.components.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if !(lo <= r.clep && r.clep <= hi) {
                        violations += 1;
                    }
                    weights_max = weights_max.max((r.weights.iter().sum::<f64>() - 1.0).abs());
                }
            })
            .unwrap();
    }
    // plus the backtest path
    let panel = generate_synthetic(&SynthSpec { counties: 200, days: 40, sigma: 0.1, seed: 9, ..Default::default() });
    let bt = rolling_backtest(&panel, 24, 25, &RunnerConfig::default(), Execution::default()).unwrap();
    updates_max = updates_max.max(bt.max_weight_sum_error);
    let worst = updates_max.max(weights_max);
    (
        outcome(
            violations == 0,
            format!("{runs} fuzzed panels/configs, {checked} county-day forecasts, {violations} outside [min, max]"),
        ),
        outcome(worst <= 1e-12, format!("max |sum(w) - 1| = {worst:.3e} over every update and forecast")),
    )
}

/// Exact rational least squares on integer data: (slope, intercept).
fn exact_ols(ys: &[i64]) -> (f64, f64) {
    let n = ys.len() as i128;
    let sx: i128 = (0..n).sum();
    let sxx: i128 = (0..n).map(|x| x * x).sum();
    let sy: i128 = ys.iter().map(|&y| y as i128).sum();
    let sxy: i128 = ys.iter().enumerate().map(|(x, &y)| x as i128 * y as i128).sum();
    let det = n * sxx - sx * sx;
    let b_num = n * sxy - sx * sy;
    let a_num = sy * sxx - sx * sxy;
    (b_num as f64 / det as f64, a_num as f64 / det as f64)
}

/// Normal equations by Cramer's rule in floating point.
fn normal_equations(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let x = i as f64;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sy * sxx - sx * sxy) / det)
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut rec_err, mut oracle_err) = (0.0f64, 0.0f64);
    let cases = 2000;
    for _ in 0..cases {
        let k = rng.random_range(3..=30);
        let a = rng.random_range(0..=1000) as f64;
        let b = rng.random_range(0..=100) as f64;
        let ys: Vec<f64> = (0..k).map(|i| a + b * i as f64).collect();
        let fit = fit_linear(&ys, 3).unwrap();
        rec_err = rec_err.max((fit.slope - b).abs()).max((fit.intercept - a).abs());

        let level = rng.random_range(1..=100) as f64;
        let r: f64 = rng.random_range(1.0..1.5);
        let shift = 1.0;
        let geo: Vec<f64> = (0..k).map(|i| level * r.powi(i) - shift).collect();
        let e = fit_exponential(&geo, shift, 3).unwrap();
        rec_err = rec_err.max((e.growth_rate - r.ln()).abs()).max((e.level - level.ln()).abs());

        let logs: Vec<f64> = geo.iter().map(|y| (y + shift).ln()).collect();
        let (ob, oa) = normal_equations(&logs);
        oracle_err = oracle_err.max((e.growth_rate - ob).abs()).max((e.level - oa).abs());

        let noisy: Vec<i64> = (0..k).map(|i| (a + b * i as f64) as i64 + rng.random_range(-20..=20)).collect();
        let fit = fit_linear(&noisy.iter().map(|&v| v as f64).collect::<Vec<_>>(), 3).unwrap();
        let (xb, xa) = exact_ols(&noisy);
        oracle_err = oracle_err.max((fit.slope - xb).abs()).max((fit.intercept - xa).abs());
    }
    outcome(
        rec_err <= 1e-8 && oracle_err <= 1e-10,
        format!("{cases} cases: max recovery error {rec_err:.2e} (<= 1e-8), max normal-equations gap {oracle_err:.2e} (<= 1e-10)"),
    )
}

fn ac6(sample_run: Option<&Path>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let county = CountyId::new("06001").unwrap();
    let mut worst = 0.0f64;
    let cases = 20000;
    for _ in 0..cases {
        let n = rng.random_range(1..=12);
        let employees: Vec<u64> = (0..n).map(|_| rng.random_range(1..=100_000)).collect();
        let value = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1e6) };
        let shares = impute_hospital(&county, value, &employees).unwrap();
        let total: f64 = shares.iter().sum();
        worst = worst.max((total - value).abs() / value.max(f64::MIN_POSITIVE));
    }
    let fixtures = [(30.0, vec![100, 200]), (17.5, vec![40]), (0.0, vec![3, 9, 1])];
    for (v, e) in fixtures {
        let total: f64 = impute_hospital(&county, v, &e).unwrap().iter().sum();
        worst = worst.max(if v == 0.0 { total.abs() } else { (total - v).abs() / v });
    }
    let mut sample_note = String::new();
    if let Some(out) = sample_run {
        let rows = read_csv(&out.join("severity.csv"));
        let fc = read_csv(&out.join("forecasts.csv"));
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for r in &rows {
            *sums.entry(r["fips"].clone()).or_default() += r["predicted_imputed"].parse::<f64>().unwrap();
        }
        for r in fc.iter().filter(|r| r["predictor"] == "clep" && r["horizon"] == "5") {
            if let Some(s) = sums.get(&r["fips"]) {
                let v: f64 = r["value"].parse().unwrap();
                worst = worst.max((s - v).abs() / v.max(f64::MIN_POSITIVE));
            }
        }
        sample_note = format!(", plus {} sample counties", sums.len());
    }
    outcome(worst <= 1e-9, format!("{cases} fuzz cases, 3 fixtures{sample_note}: max relative gap {worst:.2e}"))
}

fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = 10_000;
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.random_range(1..=60);
        let raw: Vec<i64> = (0..n).map(|_| rng.random_range(-50..=500)).collect();
        let once = validate_cumulative(&raw, MonotoneFixPolicy::RunningMax).unwrap();
        let again_in: Vec<i64> = once.values.iter().map(|&v| v as i64).collect();
        let twice = validate_cumulative(&again_in, MonotoneFixPolicy::RunningMax).unwrap();
        let monotone = once.values.windows(2).all(|w| w[0] <= w[1]);
        if twice.values != once.values || !twice.repairs.is_empty() || !monotone {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{cases} fuzzed sequences, {failures} not idempotent or not non-decreasing"))
}

fn forecasts_at(panel: &Panel, cfg: &RunnerConfig, t: usize) -> BTreeMap<Horizon, BTreeMap<CountyId, ForecastRecord>> {
    let mut state = RunnerState::new(cfg.clone(), panel).unwrap();
    let mut got = BTreeMap::new();
    state.run_through(panel, t, Execution::Sequential, |o| got = o.forecasts.clone()).unwrap();
    got
}

/// Raises every county's counts after day `t` by a random non-decreasing
/// amount, so the panel stays valid but its future changes.
fn mutate_after(panel: &Panel, t: usize, rng: &mut ChaCha8Rng) -> Panel {
    panel
        .map_series(|s| {
            let mut bump = 0u64;
            let cum_deaths = s
                .cum_deaths
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i > t {
                        bump += rng.random_range(0..50);
                    }
                    v + bump
                })
                .collect();
            DaySeries { cum_deaths, ..s.clone() }
        })
        .unwrap()
}

fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases = 100;
    let mut leaks = 0;
    for _ in 0..cases {
        let panel = random_panel(&mut rng);
        let cfg = random_config(&mut rng);
        let max_h = cfg.horizons.iter().max().unwrap().days();
        let t = rng.random_range(0..panel.days() - max_h);
        let before = forecasts_at(&panel, &cfg, t);
        let mutated = mutate_after(&panel, t, &mut rng);
        if forecasts_at(&mutated, &cfg, t) != before {
            leaks += 1;
        }
    }
    outcome(
        leaks == 0,
        format!("{cases} seeded mutation cases (every day after the origin changed), {leaks} forecasts changed"),
    )
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn sample_copy(dir: &Path) {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("sample");
    for e in fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), dir.join(e.file_name())).unwrap();
    }
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN)
        .args(args)
        .arg("--quiet")
        .arg("--config")
        .arg(dir.join("config.toml"))
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn ac9(dir: &Path) -> Outcome {
    sample_copy(dir);
    let t0 = Instant::now();
    for step in [&["ingest"][..], &["forecast"], &["severity"], &["export"]] {
        if let Err(e) = cli(dir, step) {
            return outcome(false, e);
        }
    }
    let took = t0.elapsed();
    let out = dir.join("out");
    let sev = read_csv(&out.join("severity.csv"));
    let leveled = sev.iter().filter(|r| ["low", "medium", "high"].contains(&r["level"].as_str())).count();
    let levels: BTreeSet<&str> = sev.iter().map(|r| r["level"].as_str()).collect();

    let fc = read_csv(&out.join("forecasts.csv"));
    let horizons: BTreeSet<&str> = fc.iter().map(|r| r["horizon"].as_str()).collect();
    let clep5: BTreeMap<&str, [f64; 3]> = fc
        .iter()
        .filter(|r| r["predictor"] == "clep" && r["horizon"] == "5")
        .map(|r| (r["fips"].as_str(), ["value", "lower", "upper"].map(|k| r[k].parse::<f64>().unwrap())))
        .collect();
    let map: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("map.geojson")).unwrap()).unwrap();
    let features = map["features"].as_array().cloned().unwrap_or_default();
    let mismatches = features
        .iter()
        .filter(|f| {
            let p = &f["properties"];
            let want = p["fips"].as_str().and_then(|c| clep5.get(c));
            let got = ["clep", "lower", "upper"].map(|k| p[k].as_f64());
            want.is_none_or(|w| got != [Some(w[0]), Some(w[1]), Some(w[2])])
        })
        .count();
    let pass = took < Duration::from_secs(10)
        && sev.len() == 120
        && leveled == 120
        && horizons == BTreeSet::from(["5", "7", "14"])
        && map["type"] == "FeatureCollection"
        && features.len() == clep5.len()
        && mismatches == 0;
    outcome(
        pass,
        format!(
            "ingest->forecast->severity->export {:.2}s; {leveled}/{} hospitals leveled ({:?}); {} features, {mismatches} differ from forecasts.csv",
            secs(took),
            sev.len(),
            levels,
            features.len()
        ),
    )
}

fn ac10(dir: &Path) -> Outcome {
    let (a, b) = (dir.join("a"), dir.join("b"));
    let mut same = true;
    let mut notes = Vec::new();
    for d in [&a, &b] {
        fs::create_dir_all(d).unwrap();
        sample_copy(d);
        if let Err(e) = cli(d, &["forecast"]) {
            return outcome(false, e);
        }
    }
    let files = ["forecasts.csv", "forecasts.json", "state.json"];
    let snapshot = |d: &PathBuf| files.map(|f| fs::read(d.join("out").join(f)).unwrap());
    let first = snapshot(&a);
    if let Err(e) = cli(&a, &["forecast"]) {
        return outcome(false, e);
    }
    if snapshot(&a) != first || snapshot(&b) != first {
        same = false;
        notes.push("forecast rerun differs");
    }

    let panel = generate_synthetic(&SynthSpec { counties: 300, days: 45, sigma: 0.1, seed: 10, ..Default::default() });
    let cfg = RunnerConfig::default();
    let runs: Vec<String> = [Execution::Sequential, Execution::Sequential, Execution::default()]
        .into_iter()
        .map(|e| rolling_backtest(&panel, 24, 30, &cfg, e).unwrap().to_json())
        .collect();
    if runs.iter().any(|r| r != &runs[0]) {
        same = false;
        notes.push("backtest differs");
    }
    let bt = ["backtest", "--synthetic", "--seed", "4", "--counties", "40", "--days", "45"];
    let mut reports = Vec::new();
    for d in [&a, &b] {
        if let Err(e) = cli(d, &bt) {
            return outcome(false, e);
        }
        reports.push(fs::read(d.join("out/backtest.json")).unwrap());
    }
    if reports[0] != reports[1] {
        same = false;
        notes.push("cli backtest differs");
    }
    let detail = if same {
        "forecast reruns (same and fresh directory), library backtests (sequential x2, parallel) and CLI backtests byte-identical".to_string()
    } else {
        notes.join("; ")
    };
    outcome(same, detail)
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let (ac3, ac4) = ac3_ac4();
    let e2e = tmp.path().join("e2e");
    fs::create_dir_all(&e2e).unwrap();
    let ac9 = ac9(&e2e);
    let ac6 = ac6(ac9.pass.then(|| e2e.join("out")).as_deref());
    let results = [
        ("AC1 interval coverage", ac1()),
        ("AC2 regime adaptivity", ac2()),
        ("AC3 convexity", ac3),
        ("AC4 weight normalisation", ac4),
        ("AC5 exact recovery", ac5()),
        ("AC6 conservation", ac6),
        ("AC7 cleaning idempotence", ac7()),
        ("AC8 no leakage", ac8()),
        ("AC9 end to end", ac9),
        ("AC10 determinism", ac10(tmp.path())),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("INFO {}", info_pipeline_coverage());
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
