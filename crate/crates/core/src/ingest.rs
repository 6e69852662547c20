//! Loading, merging and cleaning of the long-form CSV inputs.
//!
//! Four file kinds, each UTF-8 with an exact header row:
//!
//! | kind | header |
//! |------|--------|
//! | deaths/cases | `fips,date,cum_deaths` or `fips,date,cum_deaths,cum_cases` |
//! | static features | `fips,feature,value` |
//! | hospitals | `hospital_id,fips,employees,icu_beds` |
//! | adjacency | `fips_a,fips_b` |
//!
//! Every value that ends up in a panel can be traced to the `(source,
//! line)` it was read from or to a [`RepairRecord`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::model::{
    validate_cumulative, CountyId, Day, DaySeries, ModelError, MonotoneFixPolicy, Panel, RepairKind, RepairRecord,
};

pub const DEATHS_HEADER: [&str; 3] = ["fips", "date", "cum_deaths"];
pub const DEATHS_CASES_HEADER: [&str; 4] = ["fips", "date", "cum_deaths", "cum_cases"];
pub const FEATURES_HEADER: [&str; 3] = ["fips", "feature", "value"];
pub const HOSPITALS_HEADER: [&str; 4] = ["hospital_id", "fips", "employees", "icu_beds"];
pub const ADJACENCY_HEADER: [&str; 2] = ["fips_a", "fips_b"];

/// Source name used in logs for repairs made while merging or aligning.
pub const MERGE_SOURCE: &str = "merge";
pub const PANEL_SOURCE: &str = "panel";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("{source_name}: cannot read {path}: {message}")]
    Io { source_name: String, path: String, message: String },
    #[error("{0}: remote fetching is not supported, give a file path")]
    FetchUnsupported(String),
    #[error("{source_name}: header {found:?} does not match {expected:?}")]
    SchemaMismatch { source_name: String, expected: Vec<String>, found: Vec<String> },
    #[error("{source_name} line {line}: bad FIPS code {value:?}")]
    BadFips { source_name: String, line: u64, value: String },
    #[error("{source_name} line {line}: cannot parse {column} from {value:?}")]
    ParseError { source_name: String, line: u64, column: String, value: String },
    #[error("{source_name} line {line}: duplicate entry {key}")]
    DuplicateRow { source_name: String, line: u64, key: String },
    #[error("{source_name} line {line}: negative cumulative count")]
    NegativeCount { source_name: String, line: u64 },
    #[error("cannot align calendars for {county}: {detail}")]
    CalendarMismatch { county: CountyId, detail: String },
    #[error("sources {a} and {b} of the same kind share priority {priority}")]
    PriorityTie { a: String, b: String, priority: i64 },
    #[error("duplicate source name {0}")]
    DuplicateSource(String),
    #[error("{0} is referenced by adjacency or features but has no death series")]
    OrphanCounty(CountyId),
    #[error("hospital {hospital} is in county {county}, which is not in the panel")]
    UnknownCounty { hospital: String, county: CountyId },
    #[error("duplicate hospital id {0}")]
    DuplicateHospital(String),
    #[error("hospital {0} has no employees")]
    NonPositiveEmployees(String),
    #[error("no source of kind deaths_cases")]
    NoDeathSource,
    #[error("write failed: {0}")]
    Write(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl IngestError {
    /// Errors caused by file contents rather than the file system.
    pub fn is_schema(&self) -> bool {
        !matches!(self, IngestError::Io { .. } | IngestError::FetchUnsupported(_) | IngestError::Write(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    DeathsCases,
    StaticFeatures,
    Hospitals,
    Adjacency,
}

/// One input file and how it ranks against others of its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Remote location. Declared for configs that name one; only file
    /// paths are read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub kind: SourceKind,
    /// Higher wins on conflict.
    #[serde(default)]
    pub priority: i64,
}

impl SourceDescriptor {
    pub fn file(name: &str, path: impl Into<PathBuf>, kind: SourceKind, priority: i64) -> Self {
        SourceDescriptor { name: name.into(), path: Some(path.into()), url: None, kind, priority }
    }
}

/// Opens the bytes behind a [`SourceDescriptor`].
pub trait Fetch: Sync {
    fn open(&self, desc: &SourceDescriptor) -> Result<Box<dyn Read + Send>, IngestError>;
}

/// Reads `desc.path` from the local file system.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileFetch;

impl Fetch for FileFetch {
    fn open(&self, desc: &SourceDescriptor) -> Result<Box<dyn Read + Send>, IngestError> {
        let Some(path) = &desc.path else {
            return Err(IngestError::FetchUnsupported(desc.name.clone()));
        };
        File::open(path).map(|f| Box::new(f) as Box<dyn Read + Send>).map_err(|e| IngestError::Io {
            source_name: desc.name.clone(),
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Where a panel value was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub source: String,
    pub line: u64,
}

/// County series plus the origin of every death count (`None` for filled
/// days).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesSet {
    pub series: BTreeMap<CountyId, DaySeries>,
    pub origins: BTreeMap<CountyId, Vec<Option<Origin>>>,
}

impl SeriesSet {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyLoad {
    pub set: SeriesSet,
    pub repairs: Vec<RepairRecord>,
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r)
}

fn read_err(desc: &SourceDescriptor, e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { .. } => IngestError::ParseError {
            source_name: desc.name.clone(),
            line,
            column: "row".into(),
            value: "wrong number of fields".into(),
        },
        _ => IngestError::Io {
            source_name: desc.name.clone(),
            path: desc.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            message: e.to_string(),
        },
    }
}

fn check_header<R: Read>(
    desc: &SourceDescriptor,
    rdr: &mut csv::Reader<R>,
    allowed: &[&[&str]],
) -> Result<usize, IngestError> {
    let found: Vec<String> = rdr.headers().map_err(|e| read_err(desc, e))?.iter().map(str::to_string).collect();
    for (i, want) in allowed.iter().enumerate() {
        if found.len() == want.len() && found.iter().zip(want.iter()).all(|(a, b)| a == b) {
            return Ok(i);
        }
    }
    Err(IngestError::SchemaMismatch {
        source_name: desc.name.clone(),
        expected: allowed[0].iter().map(|s| s.to_string()).collect(),
        found,
    })
}

fn parse_fips(desc: &SourceDescriptor, line: u64, v: &str) -> Result<CountyId, IngestError> {
    CountyId::new(v).map_err(|_| IngestError::BadFips { source_name: desc.name.clone(), line, value: v.to_string() })
}

fn parse_field<T: std::str::FromStr>(
    desc: &SourceDescriptor,
    line: u64,
    column: &str,
    v: &str,
) -> Result<T, IngestError> {
    v.parse().map_err(|_| IngestError::ParseError {
        source_name: desc.name.clone(),
        line,
        column: column.to_string(),
        value: v.to_string(),
    })
}

struct RawDay {
    deaths: i64,
    cases: Option<i64>,
    line: u64,
}

/// Reads a deaths/cases file into one cleaned series per county.
///
/// Missing interior days are forward-filled and every series is passed
/// through [`validate_cumulative`]; both are logged as repairs.
pub fn load_counties(
    desc: &SourceDescriptor,
    fetch: &dyn Fetch,
    policy: MonotoneFixPolicy,
) -> Result<CountyLoad, IngestError> {
    let mut rdr = csv_reader(fetch.open(desc)?);
    let with_cases = check_header(desc, &mut rdr, &[&DEATHS_HEADER, &DEATHS_CASES_HEADER])? == 1;
    let mut rows: BTreeMap<CountyId, BTreeMap<Day, RawDay>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| read_err(desc, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let county = parse_fips(desc, line, &rec[0])?;
        let day: Day = parse_field(desc, line, "date", &rec[1])?;
        let deaths: i64 = parse_field(desc, line, "cum_deaths", &rec[2])?;
        let cases = if with_cases && !rec[3].is_empty() {
            Some(parse_field::<i64>(desc, line, "cum_cases", &rec[3])?)
        } else {
            None
        };
        let by_day = rows.entry(county.clone()).or_default();
        if by_day.insert(day, RawDay { deaths, cases, line }).is_some() {
            return Err(IngestError::DuplicateRow {
                source_name: desc.name.clone(),
                line,
                key: format!("{county},{day}"),
            });
        }
    }

    let mut out = CountyLoad { set: SeriesSet::default(), repairs: Vec::new() };
    for (county, by_day) in rows {
        let first = *by_day.keys().next().expect("non-empty group");
        let last = *by_day.keys().next_back().unwrap();
        let n = (last.0 - first.0) as usize + 1;
        let mut deaths = Vec::with_capacity(n);
        let mut cases: Vec<Option<i64>> = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut filled = Vec::new();
        for i in 0..n {
            let day = first.offset(i as i64);
            match by_day.get(&day) {
                Some(r) => {
                    deaths.push(r.deaths);
                    cases.push(r.cases);
                    origins.push(Some(Origin { source: desc.name.clone(), line: r.line }));
                }
                None => {
                    deaths.push(*deaths.last().expect("first day present"));
                    cases.push(*cases.last().unwrap());
                    origins.push(None);
                    filled.push(i);
                }
            }
        }
        let cleaned = validate_cumulative(&deaths, policy).map_err(|e| match e {
            ModelError::NegativeCount(i) => IngestError::NegativeCount {
                source_name: desc.name.clone(),
                line: origins[i].as_ref().map_or(0, |o| o.line),
            },
            other => other.into(),
        })?;
        let fill_value = |i: usize, v: &[u64]| v[i];
        for &i in &filled {
            out.repairs.push(RepairRecord {
                source: desc.name.clone(),
                county: county.clone(),
                date: first.offset(i as i64),
                field: "cum_deaths".into(),
                kind: RepairKind::ForwardFill,
                old: None,
                new: fill_value(i, &cleaned.values),
            });
        }
        for r in &cleaned.repairs {
            if filled.contains(&r.index) {
                continue;
            }
            out.repairs.push(RepairRecord {
                source: desc.name.clone(),
                county: county.clone(),
                date: first.offset(r.index as i64),
                field: "cum_deaths".into(),
                kind: if r.old < 0 { RepairKind::Negative } else { RepairKind::Dip },
                old: Some(r.old),
                new: r.new,
            });
        }
        let cum_cases =
            if with_cases { clean_cases(desc, &county, first, &cases, &filled, &mut out.repairs) } else { None };
        out.set.series.insert(
            county.clone(),
            DaySeries { county: county.clone(), start: first, cum_deaths: cleaned.values, cum_cases },
        );
        out.set.origins.insert(county, origins);
    }
    Ok(out)
}

fn clean_cases(
    desc: &SourceDescriptor,
    county: &CountyId,
    first: Day,
    cases: &[Option<i64>],
    filled: &[usize],
    repairs: &mut Vec<RepairRecord>,
) -> Option<Vec<u64>> {
    let record = |repairs: &mut Vec<RepairRecord>, i: usize, kind, old, new| {
        repairs.push(RepairRecord {
            source: desc.name.clone(),
            county: county.clone(),
            date: first.offset(i as i64),
            field: "cum_cases".into(),
            kind,
            old,
            new,
        })
    };
    if cases.iter().any(Option::is_none) {
        if cases.iter().any(Option::is_some) {
            record(repairs, 0, RepairKind::CasesDropped, None, 0);
        }
        return None;
    }
    let raw: Vec<i64> = cases.iter().map(|c| c.unwrap()).collect();
    let cleaned = validate_cumulative(&raw, MonotoneFixPolicy::RunningMax).ok()?;
    for &i in filled {
        record(repairs, i, RepairKind::ForwardFill, None, cleaned.values[i]);
    }
    for r in cleaned.repairs.iter().filter(|r| !filled.contains(&r.index)) {
        let kind = if r.old < 0 { RepairKind::Negative } else { RepairKind::Dip };
        record(repairs, r.index, kind, Some(r.old), r.new);
    }
    Some(cleaned.values)
}

/// One decision taken while merging overlapping sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub county: CountyId,
    pub date: Day,
    pub decision: MergeDecision,
    pub kept_source: String,
    pub kept: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeDecision {
    /// Both sources report the day with different counts; the higher
    /// priority one is kept.
    Conflict,
    /// Only a lower priority source reports the day.
    LowerPriorityOnly,
}

/// A loaded set of series tagged with its source's name and priority.
#[derive(Debug, Clone)]
pub struct RankedSet<'a> {
    pub name: &'a str,
    pub priority: i64,
    pub set: &'a SeriesSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutput {
    pub set: SeriesSet,
    pub merges: Vec<MergeRecord>,
    pub repairs: Vec<RepairRecord>,
}

/// Merges overlapping deaths/cases sources. For every `(county, day)` the
/// highest-priority source reporting that day wins; counties present in a
/// single source pass through unchanged. The result does not depend on the
/// order of `sources`.
pub fn merge_sources(sources: &[RankedSet<'_>]) -> Result<MergeOutput, IngestError> {
    let mut ranked: Vec<&RankedSet> = sources.iter().collect();
    ranked.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.name.cmp(b.name)));
    for w in ranked.windows(2) {
        if w[0].priority == w[1].priority {
            return Err(IngestError::PriorityTie { a: w[0].name.into(), b: w[1].name.into(), priority: w[0].priority });
        }
    }
    let counties: BTreeSet<&CountyId> = ranked.iter().flat_map(|r| r.set.series.keys()).collect();
    let mut out = MergeOutput { set: SeriesSet::default(), merges: Vec::new(), repairs: Vec::new() };
    for county in counties {
        let present: Vec<(&RankedSet, &DaySeries)> =
            ranked.iter().filter_map(|r| r.set.series.get(county).map(|s| (*r, s))).collect();
        if present.len() == 1 {
            let (r, s) = present[0];
            out.set.series.insert(county.clone(), s.clone());
            out.set.origins.insert(county.clone(), r.set.origins[county].clone());
            continue;
        }
        let first = present.iter().map(|(_, s)| s.start).min().unwrap();
        let last = present.iter().map(|(_, s)| s.end()).max().unwrap();
        let n = (last.0 - first.0) as usize + 1;
        let mut deaths = Vec::with_capacity(n);
        let mut cases: Vec<Option<u64>> = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        for i in 0..n {
            let day = first.offset(i as i64);
            let covering: Vec<(&RankedSet, &DaySeries, usize)> = present
                .iter()
                .filter(|(_, s)| s.start <= day && day <= s.end())
                .map(|(r, s)| (*r, *s, (day.0 - s.start.0) as usize))
                .collect();
            let Some(&(win, ws, wi)) = covering.first() else {
                return Err(IngestError::CalendarMismatch {
                    county: county.clone(),
                    detail: format!("no source covers {day}"),
                });
            };
            let kept = ws.cum_deaths[wi];
            if !std::ptr::eq(win, ranked[0]) && !ranked[0].set.series.contains_key(county) {
                // top source lacks the county entirely: not a decision worth logging per day
            } else if !std::ptr::eq(win, *ranked.iter().find(|r| r.set.series.contains_key(county)).unwrap()) {
                out.merges.push(MergeRecord {
                    county: county.clone(),
                    date: day,
                    decision: MergeDecision::LowerPriorityOnly,
                    kept_source: win.name.into(),
                    kept,
                    dropped_source: None,
                    dropped: None,
                });
            }
            for &(r, s, si) in &covering[1..] {
                if s.cum_deaths[si] != kept {
                    out.merges.push(MergeRecord {
                        county: county.clone(),
                        date: day,
                        decision: MergeDecision::Conflict,
                        kept_source: win.name.into(),
                        kept,
                        dropped_source: Some(r.name.into()),
                        dropped: Some(s.cum_deaths[si]),
                    });
                }
            }
            deaths.push(kept as i64);
            cases.push(ws.cum_cases.as_ref().map(|c| c[wi]));
            origins.push(win.set.origins[county][wi].clone());
        }
        let cleaned = validate_cumulative(&deaths, MonotoneFixPolicy::RunningMax)?;
        for r in &cleaned.repairs {
            out.repairs.push(RepairRecord {
                source: MERGE_SOURCE.into(),
                county: county.clone(),
                date: first.offset(r.index as i64),
                field: "cum_deaths".into(),
                kind: RepairKind::Dip,
                old: Some(r.old),
                new: r.new,
            });
        }
        let cum_cases = if cases.iter().all(Option::is_some) {
            let raw: Vec<i64> = cases.iter().map(|c| c.unwrap() as i64).collect();
            Some(validate_cumulative(&raw, MonotoneFixPolicy::RunningMax)?.values)
        } else {
            if cases.iter().any(Option::is_some) {
                out.repairs.push(RepairRecord {
                    source: MERGE_SOURCE.into(),
                    county: county.clone(),
                    date: first,
                    field: "cum_cases".into(),
                    kind: RepairKind::CasesDropped,
                    old: None,
                    new: 0,
                });
            }
            None
        };
        out.set.series.insert(
            county.clone(),
            DaySeries { county: county.clone(), start: first, cum_deaths: cleaned.values, cum_cases },
        );
        out.set.origins.insert(county.clone(), origins);
    }
    Ok(out)
}

/// Non-fatal issue found while building a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelBuild {
    pub panel: Panel,
    pub repairs: Vec<RepairRecord>,
    pub warnings: Vec<Warning>,
}

/// Aligns all series on the union of their date ranges and attaches
/// features and adjacency.
///
/// Days before a county's first report become 0, days after its last
/// report repeat the last value; both are logged. Edges listed in one
/// direction only are mirrored with a warning.
pub fn build_panel(
    set: SeriesSet,
    static_features: BTreeMap<CountyId, BTreeMap<String, f64>>,
    edges: &[(CountyId, CountyId)],
) -> Result<PanelBuild, IngestError> {
    let first = set.series.values().map(|s| s.start).min().ok_or(ModelError::EmptySeries)?;
    let last = set.series.values().map(|s| s.end()).max().unwrap();
    let days = (last.0 - first.0) as usize + 1;
    let mut repairs = Vec::new();
    let mut warnings = Vec::new();

    let mut aligned = Vec::with_capacity(set.series.len());
    for s in set.series.into_values() {
        let lead = (s.start.0 - first.0) as usize;
        let tail = days - lead - s.len();
        let mut log = |i: usize, kind, new| {
            repairs.push(RepairRecord {
                source: PANEL_SOURCE.into(),
                county: s.county.clone(),
                date: first.offset(i as i64),
                field: "cum_deaths".into(),
                kind,
                old: None,
                new,
            })
        };
        let last_val = *s.cum_deaths.last().unwrap();
        for i in 0..lead {
            log(i, RepairKind::LeadingZeroFill, 0);
        }
        for i in lead + s.len()..days {
            log(i, RepairKind::ForwardFill, last_val);
        }
        let pad = |v: &Vec<u64>| {
            let mut out = vec![0; lead];
            out.extend_from_slice(v);
            out.extend(std::iter::repeat_n(*v.last().unwrap(), tail));
            out
        };
        aligned.push(DaySeries {
            county: s.county.clone(),
            start: first,
            cum_deaths: pad(&s.cum_deaths),
            cum_cases: s.cum_cases.as_ref().map(pad),
        });
    }
    let known: BTreeSet<CountyId> = aligned.iter().map(|s| s.county.clone()).collect();

    for c in static_features.keys() {
        if !known.contains(c) {
            return Err(IngestError::OrphanCounty(c.clone()));
        }
    }
    let listed: BTreeSet<(&CountyId, &CountyId)> = edges.iter().map(|(a, b)| (a, b)).collect();
    let mut adjacency: BTreeMap<CountyId, BTreeSet<CountyId>> = BTreeMap::new();
    for (a, b) in edges {
        for c in [a, b] {
            if !known.contains(c) {
                return Err(IngestError::OrphanCounty(c.clone()));
            }
        }
        if a == b {
            warnings.push(Warning { code: "self_loop".into(), message: format!("ignored edge {a}-{b}") });
            continue;
        }
        if !listed.contains(&(b, a)) {
            warnings.push(Warning {
                code: "asymmetric_adjacency".into(),
                message: format!("{a} lists {b} but not the reverse; symmetrized"),
            });
        }
        adjacency.entry(a.clone()).or_default().insert(b.clone());
        adjacency.entry(b.clone()).or_default().insert(a.clone());
    }
    let panel = Panel::new(aligned, static_features, adjacency)?;
    Ok(PanelBuild { panel, repairs, warnings })
}

/// Reads a `fips,feature,value` file.
pub fn load_static_features(
    desc: &SourceDescriptor,
    fetch: &dyn Fetch,
) -> Result<BTreeMap<CountyId, BTreeMap<String, f64>>, IngestError> {
    let mut rdr = csv_reader(fetch.open(desc)?);
    check_header(desc, &mut rdr, &[&FEATURES_HEADER])?;
    let mut out: BTreeMap<CountyId, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| read_err(desc, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let county = parse_fips(desc, line, &rec[0])?;
        let value: f64 = parse_field(desc, line, "value", &rec[2])?;
        if !value.is_finite() {
            return Err(IngestError::ParseError {
                source_name: desc.name.clone(),
                line,
                column: "value".into(),
                value: rec[2].to_string(),
            });
        }
        if out.entry(county.clone()).or_default().insert(rec[1].to_string(), value).is_some() {
            return Err(IngestError::DuplicateRow {
                source_name: desc.name.clone(),
                line,
                key: format!("{county},{}", &rec[1]),
            });
        }
    }
    Ok(out)
}

/// Reads a `fips_a,fips_b` edge list.
pub fn load_adjacency(desc: &SourceDescriptor, fetch: &dyn Fetch) -> Result<Vec<(CountyId, CountyId)>, IngestError> {
    let mut rdr = csv_reader(fetch.open(desc)?);
    check_header(desc, &mut rdr, &[&ADJACENCY_HEADER])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| read_err(desc, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push((parse_fips(desc, line, &rec[0])?, parse_fips(desc, line, &rec[1])?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hospital {
    pub id: String,
    pub county: CountyId,
    pub employees: u64,
    pub icu_beds: u64,
}

/// Reads a hospitals file and checks every hospital against `panel`.
pub fn load_hospitals(desc: &SourceDescriptor, fetch: &dyn Fetch, panel: &Panel) -> Result<Vec<Hospital>, IngestError> {
    let mut rdr = csv_reader(fetch.open(desc)?);
    check_header(desc, &mut rdr, &[&HOSPITALS_HEADER])?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| read_err(desc, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec[0].to_string();
        let county = parse_fips(desc, line, &rec[1])?;
        let employees: i64 = parse_field(desc, line, "employees", &rec[2])?;
        let icu_beds: u64 = parse_field(desc, line, "icu_beds", &rec[3])?;
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateHospital(id));
        }
        if employees < 1 {
            return Err(IngestError::NonPositiveEmployees(id));
        }
        if panel.get(&county).is_none() {
            return Err(IngestError::UnknownCounty { hospital: id, county });
        }
        out.push(Hospital { id, county, employees: employees as u64, icu_beds });
    }
    Ok(out)
}

fn write_err(e: impl std::fmt::Display) -> IngestError {
    IngestError::Write(e.to_string())
}

/// Writes series in the deaths/cases format, sorted by county then date.
/// Cases are written only if every series has them.
pub fn write_deaths_cases<'a, W: Write>(
    series: impl IntoIterator<Item = &'a DaySeries>,
    out: W,
) -> Result<(), IngestError> {
    let series: Vec<&DaySeries> = series.into_iter().collect();
    let with_cases = !series.is_empty() && series.iter().all(|s| s.cum_cases.is_some());
    let mut w = csv::Writer::from_writer(out);
    if with_cases {
        w.write_record(DEATHS_CASES_HEADER).map_err(write_err)?;
    } else {
        w.write_record(DEATHS_HEADER).map_err(write_err)?;
    }
    let mut sorted = series;
    sorted.sort_by(|a, b| a.county.cmp(&b.county));
    for s in sorted {
        for (i, d) in s.cum_deaths.iter().enumerate() {
            let day = s.start.offset(i as i64).to_string();
            let mut row = vec![s.county.to_string(), day, d.to_string()];
            if with_cases {
                row.push(s.cum_cases.as_ref().unwrap()[i].to_string());
            }
            w.write_record(&row).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)
}

pub fn write_static_features<W: Write>(
    features: &BTreeMap<CountyId, BTreeMap<String, f64>>,
    out: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FEATURES_HEADER).map_err(write_err)?;
    for (c, fs) in features {
        for (name, v) in fs {
            w.write_record([c.as_str(), name, &v.to_string()]).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)
}

pub fn write_adjacency<W: Write>(edges: &[(CountyId, CountyId)], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ADJACENCY_HEADER).map_err(write_err)?;
    for (a, b) in edges {
        w.write_record([a.as_str(), b.as_str()]).map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

pub fn write_hospitals<W: Write>(hospitals: &[Hospital], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HOSPITALS_HEADER).map_err(write_err)?;
    for h in hospitals {
        w.write_record([h.id.as_str(), h.county.as_str(), &h.employees.to_string(), &h.icu_beds.to_string()])
            .map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

/// Everything a full ingest produces.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub panel: Panel,
    pub repairs: Vec<RepairRecord>,
    pub merges: Vec<MergeRecord>,
    pub warnings: Vec<Warning>,
}

enum Loaded {
    Counties(CountyLoad),
    Features(BTreeMap<CountyId, BTreeMap<String, f64>>),
    Edges(Vec<(CountyId, CountyId)>),
    Skipped,
}

/// Loads every non-hospital source (concurrently under
/// [`Execution::Parallel`]), merges them by priority and builds the panel.
pub fn ingest_sources(
    sources: &[SourceDescriptor],
    fetch: &dyn Fetch,
    policy: MonotoneFixPolicy,
    exec: Execution,
) -> Result<IngestOutput, IngestError> {
    let mut names = BTreeSet::new();
    for s in sources {
        if !names.insert(s.name.as_str()) {
            return Err(IngestError::DuplicateSource(s.name.clone()));
        }
    }
    if !sources.iter().any(|s| s.kind == SourceKind::DeathsCases) {
        return Err(IngestError::NoDeathSource);
    }
    let loaded = exec.map(sources, |s| match s.kind {
        SourceKind::DeathsCases => load_counties(s, fetch, policy).map(Loaded::Counties),
        SourceKind::StaticFeatures => load_static_features(s, fetch).map(Loaded::Features),
        SourceKind::Adjacency => load_adjacency(s, fetch).map(Loaded::Edges),
        SourceKind::Hospitals => Ok(Loaded::Skipped),
    });
    let mut repairs = Vec::new();
    let mut county_sets = Vec::new();
    let mut feature_sets = Vec::new();
    let mut edges = Vec::new();
    for (s, l) in sources.iter().zip(loaded) {
        match l? {
            Loaded::Counties(c) => {
                repairs.extend(c.repairs);
                county_sets.push((s, c.set));
            }
            Loaded::Features(f) => feature_sets.push((s, f)),
            Loaded::Edges(e) => edges.extend(e),
            Loaded::Skipped => {}
        }
    }
    let ranked: Vec<RankedSet> =
        county_sets.iter().map(|(s, set)| RankedSet { name: &s.name, priority: s.priority, set }).collect();
    let merged = merge_sources(&ranked)?;
    repairs.extend(merged.repairs);

    feature_sets.sort_by_key(|a| a.0.priority);
    for w in feature_sets.windows(2) {
        if w[0].0.priority == w[1].0.priority {
            return Err(IngestError::PriorityTie {
                a: w[0].0.name.clone(),
                b: w[1].0.name.clone(),
                priority: w[0].0.priority,
            });
        }
    }
    // ascending priority, so later (higher) sources overwrite
    let mut features: BTreeMap<CountyId, BTreeMap<String, f64>> = BTreeMap::new();
    for (_, f) in feature_sets {
        for (c, fs) in f {
            features.entry(c).or_default().extend(fs);
        }
    }
    edges.sort();
    edges.dedup();

    let built = build_panel(merged.set, features, &edges)?;
    repairs.extend(built.repairs);
    Ok(IngestOutput { panel: built.panel, repairs, merges: merged.merges, warnings: built.warnings })
}

/// Writes records as line-delimited JSON.
pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
