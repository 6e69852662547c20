//! Writes a self-contained sample dataset: two overlapping death sources,
//! static features, adjacency, hospitals, county geometry and a config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use clep_core::evalharness::{generate_synthetic, Regime, SynthSpec};
use clep_core::ingest::{write_adjacency, write_deaths_cases, write_hospitals, write_static_features, Hospital};
use clep_core::{CountyId, DaySeries, Panel};
use geojson::{Feature, FeatureCollection, Geometry, JsonObject, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifacts::write_file;
use crate::diag::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub counties: usize,
    pub days: usize,
    pub hospitals: usize,
    pub regime: Regime,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { counties: 50, days: 60, hospitals: 120, regime: Regime::Switching, sigma: 0.05, seed: 7 }
    }
}

pub const CONFIG_TOML: &str = r#"# Sample run configuration. Paths are relative to this file.
output_dir = "out"
horizons = [5, 7, 14]
formats = ["csv", "json", "geojson", "html"]
geometry = "counties.geojson"

[fit]
k_fit = 7
log_shift = 1.0
min_points = 3

[ensemble]
mu = 0.5
c = 1.0

[[sources]]
name = "usafacts"
kind = "deaths_cases"
path = "deaths_usafacts.csv"
priority = 10

[[sources]]
name = "nyt"
kind = "deaths_cases"
path = "deaths_nyt.csv"
priority = 5

[[sources]]
name = "features"
kind = "static_features"
path = "features.csv"

[[sources]]
name = "adjacency"
kind = "adjacency"
path = "adjacency.csv"

[[sources]]
name = "hospitals"
kind = "hospitals"
path = "hospitals.csv"
"#;

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), clep_core::ingest::IngestError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Splits the true panel into two partial, slightly disagreeing sources.
///
/// The primary covers the first 90% of counties with a few missing days
/// and reporting dips. The secondary covers the last 20% with deaths only
/// and occasional off-by-one disagreements.
fn split_sources(panel: &Panel, rng: &mut ChaCha8Rng) -> (Vec<DaySeries>, Vec<DaySeries>) {
    let n = panel.county_count();
    let primary_end = (n * 9).div_ceil(10);
    let secondary_start = n - (n / 5).max(1);
    let mut primary = Vec::new();
    let mut secondary = Vec::new();
    for (i, s) in panel.series().enumerate() {
        if i < primary_end {
            let ratio = rng.random_range(20..=40);
            let mut p = s.clone();
            let mut extra = 0;
            p.cum_cases = Some(
                s.cum_deaths
                    .iter()
                    .map(|d| {
                        extra += rng.random_range(0..5);
                        d * ratio + extra
                    })
                    .collect(),
            );
            if p.cum_deaths.len() > 3 && rng.random_bool(0.2) {
                let k = rng.random_range(2..p.cum_deaths.len() - 1);
                p.cum_deaths[k] = p.cum_deaths[k - 1].saturating_sub(1);
            }
            primary.push(p);
        }
        if i >= secondary_start {
            let mut q = s.clone();
            q.cum_cases = None;
            if i < primary_end {
                for v in q.cum_deaths.iter_mut() {
                    if rng.random_bool(0.05) {
                        *v += 1;
                    }
                }
            }
            secondary.push(q);
        }
    }
    (primary, secondary)
}

/// Deaths/cases CSV with some interior rows of the given series dropped.
fn with_gaps(series: &[DaySeries], rng: &mut ChaCha8Rng) -> Result<Vec<u8>, CliError> {
    let full = csv_bytes(|b| write_deaths_cases(series, b))?;
    let text = String::from_utf8(full).expect("csv is utf-8");
    let mut out = String::new();
    let mut lines = text.lines();
    let _ = writeln!(out, "{}", lines.next().unwrap_or_default());
    let mut prev_fips = "";
    let rows: Vec<&str> = lines.collect();
    for (i, line) in rows.iter().enumerate() {
        let fips = &line[..5];
        let first = fips != prev_fips;
        let last = rows.get(i + 1).is_none_or(|next| &next[..5] != fips);
        prev_fips = fips;
        if !first && !last && rng.random_bool(0.02) {
            continue;
        }
        let _ = writeln!(out, "{line}");
    }
    Ok(out.into_bytes())
}

fn hospitals(panel: &Panel, count: usize, rng: &mut ChaCha8Rng) -> Vec<Hospital> {
    let counties: Vec<&CountyId> = panel.counties().collect();
    (0..count)
        .map(|i| {
            let county = if i < counties.len() { counties[i] } else { counties[rng.random_range(0..counties.len())] };
            Hospital {
                id: format!("H{:04}", i + 1),
                county: county.clone(),
                employees: rng.random_range(50..=3000),
                icu_beds: rng.random_range(0..=40),
            }
        })
        .collect()
}

/// Unit squares on a 10-wide grid, one per county.
pub fn grid_geometry(counties: &[CountyId]) -> FeatureCollection {
    let size = 0.5;
    let features = counties
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (col, row) = ((i % 10) as f64, (i / 10) as f64);
            let (x0, y0) = (-100.0 + col * size, 40.0 - row * size);
            let ring =
                vec![vec![x0, y0], vec![x0 + size, y0], vec![x0 + size, y0 - size], vec![x0, y0 - size], vec![x0, y0]];
            let mut props = JsonObject::new();
            props.insert("fips".into(), c.as_str().into());
            props.insert("name".into(), format!("County {}", i + 1).into());
            Feature {
                bbox: None,
                geometry: Some(Geometry::new(Value::Polygon(vec![ring]))),
                id: None,
                properties: Some(props),
                foreign_members: None,
            }
        })
        .collect();
    FeatureCollection { bbox: None, features, foreign_members: None }
}

/// Writes the dataset into `dir`. Same spec, same bytes.
pub fn write_sample(dir: &Path, spec: &SampleSpec) -> Result<(), CliError> {
    let panel = generate_synthetic(&SynthSpec {
        regime: spec.regime,
        counties: spec.counties,
        days: spec.days,
        sigma: spec.sigma,
        seed: spec.seed,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let (primary, secondary) = split_sources(&panel, &mut rng);
    write_file(&dir.join("deaths_usafacts.csv"), &with_gaps(&primary, &mut rng)?)?;
    write_file(&dir.join("deaths_nyt.csv"), &csv_bytes(|b| write_deaths_cases(&secondary, b))?)?;

    let features: BTreeMap<CountyId, BTreeMap<String, f64>> = panel.static_features().clone();
    write_file(&dir.join("features.csv"), &csv_bytes(|b| write_static_features(&features, b))?)?;

    let mut edges = Vec::new();
    for (a, ns) in panel.adjacency() {
        for b in ns {
            edges.push((a.clone(), b.clone()));
        }
    }
    write_file(&dir.join("adjacency.csv"), &csv_bytes(|b| write_adjacency(&edges, b))?)?;

    let hs = hospitals(&panel, spec.hospitals, &mut rng);
    write_file(&dir.join("hospitals.csv"), &csv_bytes(|b| write_hospitals(&hs, b))?)?;

    let ids: Vec<CountyId> = panel.counties().cloned().collect();
    let geo = geojson::GeoJson::FeatureCollection(grid_geometry(&ids));
    write_file(&dir.join("counties.geojson"), geo.to_string().as_bytes())?;
    write_file(&dir.join("config.toml"), CONFIG_TOML.as_bytes())?;
    Ok(())
}
