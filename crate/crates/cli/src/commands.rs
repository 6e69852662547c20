//! The subcommands. Each one reads its inputs, writes under the output
//! directory and returns what it wrote for the caller to summarise.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clep_core::config::{ExportFormat, RunConfig};
use clep_core::evalharness::{generate_synthetic, required_warmup, rolling_backtest, BacktestReport, SynthSpec};
use clep_core::exec::Execution;
use clep_core::ingest::{ingest_sources, load_hospitals, write_jsonl, FileFetch, SourceKind};
use clep_core::predictors::fit_all;
use clep_core::runner::{RunnerConfig, RunnerState};
use clep_core::severity::{impute_hospital, severity_index, HospitalInput, Level};
use clep_core::{CountyId, Day, Horizon, Panel, PredictorId};
use serde_json::json;

use crate::artifacts::*;
use crate::diag::{CliError, Diagnostics, EXIT_NO_GEOMETRY, EXIT_NO_HOSPITALS, EXIT_OTHER, EXIT_OUT_OF_RANGE};
use crate::report::{build_map, load_geometry, map_horizon, render_html};

/// Horizon whose forecasts feed the severity index.
pub const SEVERITY_HORIZON: u32 = 5;

pub struct Ctx {
    pub config: Option<RunConfig>,
    pub out: PathBuf,
    pub formats: Vec<ExportFormat>,
    /// Overrides the configured horizons when non-empty.
    pub horizons: Vec<Horizon>,
    pub exec: Execution,
    pub diag: Diagnostics,
}

impl Ctx {
    pub fn config(&self) -> Result<&RunConfig, CliError> {
        self.config.as_ref().ok_or_else(|| {
            CliError::new(EXIT_OTHER, "NoConfig", "no config given; pass --config or set CLEP_FORECAST_CONFIG")
        })
    }

    pub fn wants(&self, f: ExportFormat) -> bool {
        self.formats.contains(&f)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn horizons(&self) -> Vec<Horizon> {
        match &self.config {
            Some(c) => c.effective_horizons(&self.horizons),
            None if self.horizons.is_empty() => Horizon::CANONICAL.iter().map(|&h| Horizon::new(h).unwrap()).collect(),
            None => {
                let mut h = self.horizons.clone();
                h.sort();
                h.dedup();
                h
            }
        }
    }

    pub fn runner_config(&self, horizons: Vec<Horizon>) -> RunnerConfig {
        let (fit, ensemble) = match &self.config {
            Some(c) => (c.fit, c.ensemble),
            None => Default::default(),
        };
        RunnerConfig { fit, ensemble, horizons, predictors: PredictorId::ALL.to_vec() }
    }
}

/// Loads all sources, writes the panel artifact and the repair and merge
/// logs.
pub fn ingest(ctx: &Ctx) -> Result<Panel, CliError> {
    let cfg = ctx.config()?;
    let out = ingest_sources(&cfg.sources, &FileFetch, cfg.cleaning, ctx.exec)?;
    for w in &out.warnings {
        ctx.diag.warn(&w.code, &w.message, serde_json::Value::Null);
    }
    write_file(&ctx.path(PANEL_FILE), serde_json::to_string(&out.panel).expect("panel serialises").as_bytes())?;
    let mut buf = Vec::new();
    write_jsonl(&out.repairs, &mut buf).expect("in-memory write");
    write_file(&ctx.path(REPAIRS_FILE), &buf)?;
    buf.clear();
    write_jsonl(&out.merges, &mut buf).expect("in-memory write");
    write_file(&ctx.path(MERGES_FILE), &buf)?;
    ctx.diag.info(
        "Ingested",
        "panel written",
        json!({
            "counties": out.panel.county_count(),
            "days": out.panel.days(),
            "start": out.panel.start(),
            "end": out.panel.end(),
            "repairs": out.repairs.len(),
            "merge_decisions": out.merges.len(),
        }),
    );
    Ok(out.panel)
}

/// The panel artifact, ingesting first if there is none.
pub fn load_panel(ctx: &Ctx) -> Result<Panel, CliError> {
    let path = ctx.path(PANEL_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| CliError::new(crate::diag::EXIT_SCHEMA, "PanelInvalid", format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            ctx.diag.info("NoPanel", "no panel artifact; ingesting", serde_json::Value::Null);
            ingest(ctx)
        }
        Err(e) => Err(CliError::io(&path, e)),
    }
}

/// Day index of `as_of`, defaulting to the last panel day.
pub fn resolve_as_of(panel: &Panel, as_of: Option<Day>) -> Result<usize, CliError> {
    match as_of {
        None => Ok(panel.days() - 1),
        Some(d) => panel.day_index(d).ok_or_else(|| {
            CliError::new(
                EXIT_OUT_OF_RANGE,
                "OutOfRange",
                format!("as-of {d} is outside the panel range {} .. {}", panel.start(), panel.end()),
            )
        }),
    }
}

/// Forecasts issued at day index `t`.
///
/// Resumes from the saved runner state when it is compatible and not past
/// `t`; otherwise replays from the first panel day. With `persist`, a state
/// that advanced is saved back.
pub fn compute_forecast(
    ctx: &Ctx,
    panel: &Panel,
    t: usize,
    horizons: Vec<Horizon>,
    persist: bool,
) -> Result<ForecastDoc, CliError> {
    let rc = ctx.runner_config(horizons);
    rc.validate()?;
    let day = panel.day(t);
    let state_path = ctx.path(STATE_FILE);
    let mut can_save = persist;
    let saved = match fs::read_to_string(&state_path) {
        Ok(text) => match RunnerState::from_json(&text) {
            Ok(s) => match s.check_compatible(&rc, panel) {
                Ok(()) if s.last_day.is_none_or(|d| d <= day) => Some(s),
                Ok(()) => {
                    ctx.diag.info(
                        "StateAhead",
                        "saved state is past the as-of date; replaying without saving",
                        json!({"state_day": s.last_day, "as_of": day}),
                    );
                    can_save = false;
                    None
                }
                Err(e) => {
                    ctx.diag.warn("StateDiscarded", &format!("saved state not reused: {e}"), serde_json::Value::Null);
                    None
                }
            },
            Err(e) => {
                ctx.diag.warn("StateDiscarded", &format!("saved state unreadable: {e}"), serde_json::Value::Null);
                None
            }
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(CliError::io(&state_path, e)),
    };
    let resumed = saved.is_some();
    let mut state = match saved {
        Some(s) => s,
        None => RunnerState::new(rc.clone(), panel)?,
    };
    let forecasts = if state.last_day == Some(day) {
        state.pending_at(day)
    } else {
        let mut captured = BTreeMap::new();
        state.run_through(panel, t, ctx.exec, |out| {
            if out.origin == Some(day) {
                captured = out.forecasts.clone();
            }
        })?;
        if can_save {
            write_file(&state_path, state.to_json().as_bytes())?;
        }
        captured
    };
    ctx.diag.info("Forecast", "forecasts computed", json!({"as_of": day, "resumed": resumed}));
    let fallbacks = fit_all(panel, t, &rc.fit, ctx.exec).fallbacks;
    if !fallbacks.is_empty() {
        ctx.diag.info("Fallbacks", "some fits fell back to persistence", json!({"count": fallbacks.len()}));
    }
    Ok(ForecastDoc::new(day, &rc.predictors, &forecasts, fallbacks))
}

pub fn forecast(ctx: &Ctx, as_of: Option<Day>) -> Result<ForecastDoc, CliError> {
    let panel = load_panel(ctx)?;
    let t = resolve_as_of(&panel, as_of)?;
    let doc = compute_forecast(ctx, &panel, t, ctx.horizons(), true)?;
    if ctx.wants(ExportFormat::Csv) {
        write_file(&ctx.path(FORECAST_CSV), &doc.to_csv())?;
    }
    if ctx.wants(ExportFormat::Json) {
        write_file(&ctx.path(FORECAST_JSON), doc.to_json().as_bytes())?;
    }
    Ok(doc)
}

fn severity_doc(ctx: &Ctx, panel: &Panel, t: usize, doc: &ForecastDoc) -> Result<SeverityDoc, CliError> {
    let cfg = ctx.config()?;
    let sources: Vec<_> = cfg.sources_of(SourceKind::Hospitals).collect();
    if sources.is_empty() {
        return Err(CliError::new(EXIT_NO_HOSPITALS, "NoHospitalSource", "config lists no hospitals source"));
    }
    let mut hospitals = Vec::new();
    for s in sources {
        hospitals.extend(load_hospitals(s, &FileFetch, panel)?);
    }
    let mut seen = std::collections::BTreeSet::new();
    for h in &hospitals {
        if !seen.insert(&h.id) {
            return Err(clep_core::ingest::IngestError::DuplicateHospital(h.id.clone()).into());
        }
    }
    let h5 = Horizon::new(SEVERITY_HORIZON).expect("valid horizon");
    let mut by_county: BTreeMap<&CountyId, Vec<usize>> = BTreeMap::new();
    for (i, h) in hospitals.iter().enumerate() {
        by_county.entry(&h.county).or_default().push(i);
    }
    let mut current = vec![0.0; hospitals.len()];
    let mut predicted = vec![0.0; hospitals.len()];
    let mut unassigned = Vec::new();
    for c in panel.counties() {
        let cur = panel.deaths(c).expect("panel county")[t] as f64;
        let pred = doc.row(c, h5).map(|r| r.clep).expect("forecast for every county");
        let Some(idx) = by_county.get(c) else {
            ctx.diag.info(
                "NoHospitals",
                "county has no hospitals; values unassigned",
                json!({"fips": c, "current": cur, "predicted": pred}),
            );
            unassigned.push(Unassigned { fips: c.clone(), current: cur, predicted: pred });
            continue;
        };
        let employees: Vec<u64> = idx.iter().map(|&i| hospitals[i].employees).collect();
        let cur_share = impute_hospital(c, cur, &employees).expect("employees validated at load");
        let pred_share = impute_hospital(c, pred, &employees).expect("employees validated at load");
        for (k, &i) in idx.iter().enumerate() {
            current[i] = cur_share[k];
            predicted[i] = pred_share[k];
        }
    }
    let inputs: Vec<HospitalInput> = hospitals
        .iter()
        .enumerate()
        .map(|(i, h)| HospitalInput {
            hospital: h.id.clone(),
            county: h.county.clone(),
            current_imputed: current[i],
            predicted_imputed: predicted[i],
            icu_beds: h.icu_beds,
        })
        .collect();
    let records = severity_index(&inputs, ctx.exec);
    let mut county_levels: BTreeMap<CountyId, Level> = BTreeMap::new();
    for r in &records {
        let e = county_levels.entry(r.county.clone()).or_insert(r.level);
        *e = (*e).max(r.level);
    }
    Ok(SeverityDoc { as_of: doc.as_of, horizon: h5, hospitals: records, county_levels, unassigned })
}

fn with_severity_horizon(mut h: Vec<Horizon>) -> Vec<Horizon> {
    let h5 = Horizon::new(SEVERITY_HORIZON).expect("valid horizon");
    if !h.contains(&h5) {
        h.push(h5);
        h.sort();
    }
    h
}

pub fn severity(ctx: &Ctx, as_of: Option<Day>) -> Result<SeverityDoc, CliError> {
    let cfg = ctx.config()?;
    if cfg.sources_of(SourceKind::Hospitals).next().is_none() {
        return Err(CliError::new(EXIT_NO_HOSPITALS, "NoHospitalSource", "config lists no hospitals source"));
    }
    let panel = load_panel(ctx)?;
    let t = resolve_as_of(&panel, as_of)?;
    let doc = compute_forecast(ctx, &panel, t, with_severity_horizon(ctx.horizons()), false)?;
    let sev = severity_doc(ctx, &panel, t, &doc)?;
    if ctx.wants(ExportFormat::Csv) {
        write_file(&ctx.path(SEVERITY_CSV), &sev.to_csv())?;
    }
    if ctx.wants(ExportFormat::Json) {
        write_file(&ctx.path(SEVERITY_JSON), sev.to_json().as_bytes())?;
    }
    Ok(sev)
}

/// Writes the map and the HTML report. Returns the number of map features.
pub fn export(ctx: &Ctx, as_of: Option<Day>) -> Result<usize, CliError> {
    let cfg = ctx.config()?;
    let geometry_path = cfg
        .geometry
        .clone()
        .ok_or_else(|| CliError::new(EXIT_NO_GEOMETRY, "GeometryMissing", "config names no geometry file"))?;
    if !geometry_path.is_file() {
        return Err(CliError::new(
            EXIT_NO_GEOMETRY,
            "GeometryMissing",
            format!("{} not found", geometry_path.display()),
        ));
    }
    let geometry = load_geometry(&geometry_path)?;
    let panel = load_panel(ctx)?;
    let t = resolve_as_of(&panel, as_of)?;
    let doc = compute_forecast(ctx, &panel, t, ctx.horizons(), false)?;
    let sev = if cfg.sources_of(SourceKind::Hospitals).next().is_some() {
        let h5 = Horizon::new(SEVERITY_HORIZON).expect("valid horizon");
        let doc5 = if doc.horizons.contains(&h5) {
            doc.clone()
        } else {
            compute_forecast(ctx, &panel, t, with_severity_horizon(ctx.horizons()), false)?
        };
        Some(severity_doc(ctx, &panel, t, &doc5)?)
    } else {
        ctx.diag.warn("NoHospitalSource", "no hospitals source; map levels left empty", serde_json::Value::Null);
        None
    };
    let horizon = map_horizon(&doc).expect("at least one horizon");
    let (map, skipped) = build_map(&doc, horizon, sev.as_ref().map(|s| &s.county_levels), &geometry);
    for c in &skipped {
        ctx.diag.warn("MissingGeometry", "county has no geometry; left off the map", json!({"fips": c}));
    }
    if ctx.wants(ExportFormat::Geojson) {
        write_file(&ctx.path(MAP_FILE), geojson::GeoJson::FeatureCollection(map.clone()).to_string().as_bytes())?;
    }
    if ctx.wants(ExportFormat::Html) {
        write_file(&ctx.path(REPORT_FILE), render_html(&doc, &map, horizon, sev.as_ref()).as_bytes())?;
    }
    Ok(map.features.len())
}

/// Where the backtest panel comes from.
pub enum BacktestInput {
    Config,
    Synthetic(SynthSpec),
}

pub fn backtest(
    ctx: &Ctx,
    input: BacktestInput,
    start: Option<Day>,
    end: Option<Day>,
) -> Result<BacktestReport, CliError> {
    let panel = match input {
        BacktestInput::Config => load_panel(ctx)?,
        BacktestInput::Synthetic(spec) => generate_synthetic(&spec),
    };
    let rc = ctx.runner_config(ctx.horizons());
    rc.validate()?;
    let max_h = *rc.horizons.iter().max().expect("validated");
    let index = |d: Day| {
        panel.day_index(d).ok_or_else(|| {
            CliError::new(
                EXIT_OUT_OF_RANGE,
                "OutOfRange",
                format!("{d} is outside the panel range {} .. {}", panel.start(), panel.end()),
            )
        })
    };
    let s = match start {
        Some(d) => index(d)?,
        None => required_warmup(&rc.fit, max_h),
    };
    let e = match end {
        Some(d) => index(d)?,
        None => (panel.days() - 1).saturating_sub(max_h.days()),
    };
    let report = rolling_backtest(&panel, s, e, &rc, ctx.exec)?;
    if ctx.wants(ExportFormat::Json) {
        write_file(&ctx.path(BACKTEST_JSON), report.to_json().as_bytes())?;
    }
    write_file(&ctx.path(BACKTEST_TXT), report.to_table().as_bytes())?;
    Ok(report)
}

/// Ingest, forecast, severity and export in one go.
pub fn run(ctx: &Ctx, as_of: Option<Day>) -> Result<(), CliError> {
    ingest(ctx)?;
    forecast(ctx, as_of)?;
    severity(ctx, as_of)?;
    export(ctx, as_of)?;
    Ok(())
}
