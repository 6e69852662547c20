use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use clep_core::evalharness::{generate_synthetic, rolling_backtest, SynthSpec};
use clep_core::exec::Execution;
use clep_core::predictors::fit_all;
use clep_core::runner::RunnerConfig;
use clep_core::FitConfig;

fn modes() -> Vec<(&'static str, Execution)> {
    let mut m = vec![("sequential", Execution::Sequential)];
    if cfg!(feature = "parallel") {
        m.push(("parallel", Execution::Parallel));
    }
    m
}

fn bench_fit(c: &mut Criterion) {
    let panel = generate_synthetic(&SynthSpec { counties: 1000, days: 40, sigma: 0.05, seed: 7, ..Default::default() });
    let cfg = FitConfig::default();
    let mut g = c.benchmark_group("fit_all_1000");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| fit_all(&panel, 39, &cfg, exec))
        });
    }
    g.finish();
}

fn bench_backtest(c: &mut Criterion) {
    let panel = generate_synthetic(&SynthSpec { counties: 1000, days: 40, sigma: 0.05, seed: 7, ..Default::default() });
    let cfg = RunnerConfig::default();
    let mut g = c.benchmark_group("backtest_1000x40");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| rolling_backtest(&panel, 24, 25, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_fit, bench_backtest);
criterion_main!(benches);
