//! Library-level checks across ingest, runner, ensemble and intervals.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};

use clep_core::evalharness::{generate_synthetic, Regime, SynthSpec};
use clep_core::exec::Execution;
use clep_core::ingest::{
    ingest_sources, write_adjacency, write_deaths_cases, write_static_features, Fetch, IngestError, SourceDescriptor,
    SourceKind,
};
use clep_core::model::MonotoneFixPolicy;
use clep_core::runner::{RunnerConfig, RunnerState};
use clep_core::{Horizon, Panel};
use proptest::prelude::*;

/// Sources served from memory, keyed by name.
struct MemFetch(BTreeMap<String, Vec<u8>>);

impl Fetch for MemFetch {
    fn open(&self, desc: &SourceDescriptor) -> Result<Box<dyn Read + Send>, IngestError> {
        let bytes = self.0.get(&desc.name).cloned().unwrap_or_default();
        Ok(Box::new(Cursor::new(bytes)))
    }
}

fn regime() -> impl Strategy<Value = Regime> {
    prop_oneof![Just(Regime::Linear), Just(Regime::Exponential), Just(Regime::Logistic), Just(Regime::Switching)]
}

fn small_panel() -> impl Strategy<Value = Panel> {
    (regime(), 2usize..7, 18usize..36, 0.0f64..0.3, any::<u64>()).prop_map(|(regime, counties, days, sigma, seed)| {
        generate_synthetic(&SynthSpec { regime, counties, days, sigma, seed, ..Default::default() })
    })
}

fn config() -> RunnerConfig {
    RunnerConfig { horizons: [1, 5, 7].map(|d| Horizon::new(d).unwrap()).to_vec(), ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_forecast_respects_floor_and_interval(panel in small_panel()) {
        let mut state = RunnerState::new(config(), &panel).unwrap();
        let mut seen = 0;
        state.run_through(&panel, panel.days() - 1, Execution::Sequential, |out| {
            for r in out.forecasts.values().flat_map(|m| m.values()) {
                seen += 1;
                assert!(r.components.iter().all(|&c| c >= r.last_obs));
                assert!(r.clep >= r.last_obs);
                assert!(r.interval.lower >= r.last_obs);
                assert!(r.interval.lower <= r.clep && r.clep <= r.interval.upper);
                assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }).unwrap();
        prop_assert!(seen > 0);
    }

    #[test]
    fn resumed_state_matches_full_replay(panel in small_panel(), cut in 0usize..30) {
        let cut = cut.min(panel.days() - 2);
        let mut full = RunnerState::new(config(), &panel).unwrap();
        full.run_through(&panel, panel.days() - 1, Execution::Sequential, |_| {}).unwrap();

        let mut first = RunnerState::new(config(), &panel).unwrap();
        first.run_through(&panel, cut, Execution::Sequential, |_| {}).unwrap();
        let mut resumed = RunnerState::from_json(&first.to_json()).unwrap();
        resumed.check_compatible(&config(), &panel).unwrap();
        resumed.run_through(&panel, panel.days() - 1, Execution::default(), |_| {}).unwrap();
        prop_assert_eq!(resumed.to_json(), full.to_json());
    }

    #[test]
    fn written_sources_ingest_back_to_the_same_panel(panel in small_panel()) {
        let mut files = BTreeMap::new();
        let mut deaths = Vec::new();
        write_deaths_cases(panel.series(), &mut deaths).unwrap();
        files.insert("deaths".to_string(), deaths);
        let mut features = Vec::new();
        write_static_features(panel.static_features(), &mut features).unwrap();
        files.insert("features".to_string(), features);
        let edges: Vec<_> = panel
            .adjacency()
            .iter()
            .flat_map(|(a, ns)| ns.iter().map(move |b| (a.clone(), b.clone())))
            .collect();
        let mut adjacency = Vec::new();
        write_adjacency(&edges, &mut adjacency).unwrap();
        files.insert("adjacency".to_string(), adjacency);

        let sources = [
            SourceDescriptor::file("deaths", "deaths.csv", SourceKind::DeathsCases, 1),
            SourceDescriptor::file("features", "features.csv", SourceKind::StaticFeatures, 0),
            SourceDescriptor::file("adjacency", "adjacency.csv", SourceKind::Adjacency, 0),
        ];
        let out = ingest_sources(&sources, &MemFetch(files), MonotoneFixPolicy::RunningMax, Execution::Sequential).unwrap();
        prop_assert!(out.repairs.is_empty());
        prop_assert!(out.merges.is_empty());
        prop_assert_eq!(out.panel.days(), panel.days());
        let got: Vec<_> = out.panel.series().map(|s| s.cum_deaths.clone()).collect();
        let want: Vec<_> = panel.series().map(|s| s.cum_deaths.clone()).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(out.panel.adjacency(), panel.adjacency());
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let panel = generate_synthetic(&SynthSpec { counties: 60, days: 35, sigma: 0.1, seed: 3, ..Default::default() });
    let run = |exec| {
        let mut s = RunnerState::new(config(), &panel).unwrap();
        s.run_through(&panel, panel.days() - 1, exec, |_| {}).unwrap();
        s.to_json()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::default()));
}
