//! On-disk artifacts: forecast and severity tables, atomic writes and the
//! output directory lock.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use clep_core::predictors::Fallback;
use clep_core::runner::ForecastRecord;
use clep_core::severity::{Level, SeverityRecord};
use clep_core::{CountyId, Day, Horizon, PredictorId};
use serde::{Deserialize, Serialize};

use crate::diag::{CliError, EXIT_OTHER};

pub const PANEL_FILE: &str = "panel.json";
pub const REPAIRS_FILE: &str = "repairs.jsonl";
pub const MERGES_FILE: &str = "merges.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const FORECAST_CSV: &str = "forecasts.csv";
pub const FORECAST_JSON: &str = "forecasts.json";
pub const SEVERITY_CSV: &str = "severity.csv";
pub const SEVERITY_JSON: &str = "severity.json";
pub const MAP_FILE: &str = "map.geojson";
pub const REPORT_FILE: &str = "report.html";
pub const BACKTEST_JSON: &str = "backtest.json";
pub const BACKTEST_TXT: &str = "backtest.txt";
pub const LOCK_FILE: &str = ".clep-forecast.lock";

pub const FORECAST_HEADER: [&str; 7] = ["fips", "as_of", "horizon", "predictor", "value", "lower", "upper"];
pub const SEVERITY_HEADER: [&str; 7] =
    ["hospital_id", "fips", "current_imputed", "predicted_imputed", "icu_beds", "score", "level"];

/// Writes through a temporary file and a rename so readers never see a
/// half-written artifact.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Advisory lock on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                EXIT_OTHER,
                "Locked",
                format!("{} exists; another run is using this output directory", path.display()),
            )),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One county and horizon of a forecast run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub fips: CountyId,
    pub horizon: Horizon,
    pub components: BTreeMap<String, f64>,
    pub clep: f64,
    pub lower: f64,
    pub upper: f64,
    pub delta: f64,
    pub provisional: bool,
    pub weights: BTreeMap<String, f64>,
    pub last_obs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDoc {
    pub as_of: Day,
    pub horizons: Vec<Horizon>,
    pub rows: Vec<ForecastRow>,
    pub fallbacks: Vec<Fallback>,
}

impl ForecastDoc {
    pub fn new(
        as_of: Day,
        predictors: &[PredictorId],
        forecasts: &BTreeMap<Horizon, BTreeMap<CountyId, ForecastRecord>>,
        fallbacks: Vec<Fallback>,
    ) -> Self {
        let mut rows = Vec::new();
        for (&h, by_county) in forecasts {
            for (c, r) in by_county {
                rows.push(ForecastRow {
                    fips: c.clone(),
                    horizon: h,
                    components: PredictorId::ALL
                        .iter()
                        .map(|p| (p.tag().to_string(), r.components[p.index()]))
                        .collect(),
                    clep: r.clep,
                    lower: r.interval.lower,
                    upper: r.interval.upper,
                    delta: r.interval.delta,
                    provisional: r.interval.provisional,
                    weights: predictors.iter().zip(&r.weights).map(|(p, w)| (p.tag().to_string(), *w)).collect(),
                    last_obs: r.last_obs,
                });
            }
        }
        rows.sort_by(|a, b| a.fips.cmp(&b.fips).then(a.horizon.cmp(&b.horizon)));
        ForecastDoc { as_of, horizons: forecasts.keys().copied().collect(), rows, fallbacks }
    }

    pub fn row(&self, fips: &CountyId, horizon: Horizon) -> Option<&ForecastRow> {
        self.rows.iter().find(|r| &r.fips == fips && r.horizon == horizon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forecast serialises")
    }

    /// Long table, one row per county, horizon and model. Bounds are filled
    /// on `clep` rows only.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(FORECAST_HEADER).expect("in-memory write");
        let as_of = self.as_of.to_string();
        for r in &self.rows {
            let h = r.horizon.to_string();
            for (tag, v) in &r.components {
                w.write_record([r.fips.as_str(), &as_of, &h, tag, &v.to_string(), "", ""]).expect("in-memory write");
            }
            w.write_record([
                r.fips.as_str(),
                &as_of,
                &h,
                "clep",
                &r.clep.to_string(),
                &r.lower.to_string(),
                &r.upper.to_string(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Severity output for one as-of date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityDoc {
    pub as_of: Day,
    pub horizon: Horizon,
    pub hospitals: Vec<SeverityRecord>,
    /// Highest hospital level per county.
    pub county_levels: BTreeMap<CountyId, Level>,
    /// Counties with no hospital, whose values stay unassigned.
    pub unassigned: Vec<Unassigned>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unassigned {
    pub fips: CountyId,
    pub current: f64,
    pub predicted: f64,
}

impl SeverityDoc {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("severity serialises")
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SEVERITY_HEADER).expect("in-memory write");
        for r in &self.hospitals {
            w.write_record([
                r.hospital.as_str(),
                r.county.as_str(),
                &r.current_imputed.to_string(),
                &r.predicted_imputed.to_string(),
                &r.icu_beds.to_string(),
                &r.total.to_string(),
                r.level.as_str(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}
