//! Domain types for county panels and the cleaning and windowing
//! primitives the rest of the crate builds on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("bad FIPS code {0:?}: expected 5 digits with a known state prefix")]
    BadFips(String),
    #[error("negative cumulative count at index {0}")]
    NegativeCount(usize),
    #[error("empty series")]
    EmptySeries,
    #[error("window of {k} days ending at day index {end} is out of range (series length {len})")]
    WindowOutOfRange { end: usize, k: usize, len: usize },
    #[error("horizon {0} outside 1..=21")]
    BadHorizon(u32),
    #[error("bad date {0:?}: expected YYYY-MM-DD")]
    BadDate(String),
    #[error("series for {county} does not span the panel calendar")]
    Misaligned { county: CountyId },
    #[error("series for {county} is not a valid cumulative series: {reason}")]
    InvalidSeries { county: CountyId, reason: String },
    #[error("adjacency is not symmetric: {a} lists {b} but not the reverse")]
    AsymmetricAdjacency { a: CountyId, b: CountyId },
    #[error("{0} is referenced by adjacency or features but has no series")]
    OrphanCounty(CountyId),
    #[error("unsupported panel document version {0}")]
    UnsupportedVersion(u32),
}

/// Territory state codes accepted in addition to 01–56.
pub const TERRITORY_STATE_CODES: [u8; 5] = [60, 66, 69, 72, 78];

/// Five-digit county FIPS code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountyId(String);

impl CountyId {
    pub fn new(code: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::BadFips(code.to_string());
        if code.len() != 5 || !code.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let state: u8 = code[..2].parse().map_err(|_| bad())?;
        if (1..=56).contains(&state) || TERRITORY_STATE_CODES.contains(&state) {
            Ok(CountyId(code.to_string()))
        } else {
            Err(bad())
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn state_code(&self) -> &str {
        &self.0[..2]
    }
}

impl fmt::Display for CountyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CountyId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountyId::new(s)
    }
}

impl Serialize for CountyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CountyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CountyId::new(&s).map_err(serde::de::Error::custom)
    }
}

/// A calendar day, stored as days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

impl Day {
    const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
        Some(d) => d,
        None => unreachable!(),
    };

    pub fn from_date(date: NaiveDate) -> Self {
        Day((date - Self::EPOCH).num_days() as i32)
    }

    pub fn to_date(self) -> NaiveDate {
        Self::EPOCH + chrono::Duration::days(self.0 as i64)
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").map(Day::from_date).map_err(|_| ModelError::BadDate(s.to_string()))
    }

    pub fn offset(self, days: i64) -> Day {
        Day(self.0 + days as i32)
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format("%Y-%m-%d"))
    }
}

impl FromStr for Day {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Day::parse(s)
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Day::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Forecast lead time in days, 1 through 21.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Horizon(u32);

impl Horizon {
    pub const MAX: u32 = 21;
    /// Lead times the daily run produces by default.
    pub const CANONICAL: [u32; 3] = [5, 7, 14];

    pub fn new(days: u32) -> Result<Self, ModelError> {
        if (1..=Self::MAX).contains(&days) {
            Ok(Horizon(days))
        } else {
            Err(ModelError::BadHorizon(days))
        }
    }

    pub fn days(self) -> usize {
        self.0 as usize
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Horizon {
    type Error = ModelError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Horizon::new(v)
    }
}

impl From<Horizon> for u32 {
    fn from(h: Horizon) -> u32 {
        h.0
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How [`validate_cumulative`] treats dips and negative entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneFixPolicy {
    /// Negative entries become 0 and every entry is raised to the running
    /// maximum of the entries before it.
    #[default]
    RunningMax,
    /// Negative entries are an error; dips are still raised to the running
    /// maximum.
    Strict,
}

/// One changed entry of a cumulative series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub index: usize,
    pub old: i64,
    pub new: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cleaned {
    pub values: Vec<u64>,
    pub repairs: Vec<Repair>,
}

/// Repairs a raw cumulative series so it is non-negative and non-decreasing.
///
/// Under [`MonotoneFixPolicy::RunningMax`] the output at `i` is exactly
/// `max(0, raw[0..=i])`. Applying it to its own output changes nothing.
pub fn validate_cumulative(raw: &[i64], policy: MonotoneFixPolicy) -> Result<Cleaned, ModelError> {
    if raw.is_empty() {
        return Err(ModelError::EmptySeries);
    }
    let mut values = Vec::with_capacity(raw.len());
    let mut repairs = Vec::new();
    let mut floor = 0u64;
    for (index, &old) in raw.iter().enumerate() {
        if old < 0 && policy == MonotoneFixPolicy::Strict {
            return Err(ModelError::NegativeCount(index));
        }
        let clamped = old.max(0) as u64;
        let new = clamped.max(floor);
        if new as i128 != old as i128 {
            repairs.push(Repair { index, old, new });
        }
        floor = new;
        values.push(new);
    }
    Ok(Cleaned { values, repairs })
}

/// The last `k` values of `values` ending at index `end` (inclusive).
pub fn window<T>(values: &[T], end: usize, k: usize) -> Result<&[T], ModelError> {
    if k == 0 || k > end + 1 || end >= values.len() {
        return Err(ModelError::WindowOutOfRange { end, k, len: values.len() });
    }
    Ok(&values[end + 1 - k..=end])
}

/// Cumulative deaths (and optionally cases) of one county, one entry per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySeries {
    pub county: CountyId,
    pub start: Day,
    pub cum_deaths: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cum_cases: Option<Vec<u64>>,
}

impl DaySeries {
    pub fn len(&self) -> usize {
        self.cum_deaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum_deaths.is_empty()
    }

    /// Last day covered (inclusive). Meaningless for an empty series.
    pub fn end(&self) -> Day {
        self.start.offset(self.cum_deaths.len() as i64 - 1)
    }

    pub fn window(&self, end: usize, k: usize) -> Result<&[u64], ModelError> {
        window(&self.cum_deaths, end, k)
    }

    fn check(&self) -> Result<(), ModelError> {
        let fail = |reason: &str| ModelError::InvalidSeries { county: self.county.clone(), reason: reason.to_string() };
        if self.cum_deaths.is_empty() {
            return Err(fail("empty"));
        }
        if self.cum_deaths.windows(2).any(|w| w[1] < w[0]) {
            return Err(fail("cum_deaths decreases"));
        }
        if let Some(cases) = &self.cum_cases {
            if cases.len() != self.cum_deaths.len() {
                return Err(fail("cum_cases length differs from cum_deaths"));
            }
        }
        Ok(())
    }
}

/// What a logged repair did to a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairKind {
    /// Raised to the running maximum.
    Dip,
    /// Negative raw value clamped to zero.
    Negative,
    /// Day before the county's first report, filled with 0.
    LeadingZeroFill,
    /// Day missing inside or after the reported range, filled with the
    /// previous value.
    ForwardFill,
    /// Cumulative cases were dropped because some merged days had none.
    CasesDropped,
}

/// Line of the repair log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub source: String,
    pub county: CountyId,
    pub date: Day,
    pub field: String,
    pub kind: RepairKind,
    pub old: Option<i64>,
    pub new: u64,
}

/// Calendar-aligned county series with static features and adjacency.
///
/// Immutable once built; every series starts on [`Panel::start`] and has
/// [`Panel::days`] entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PanelDoc", into = "PanelDoc")]
pub struct Panel {
    start: Day,
    days: usize,
    series: BTreeMap<CountyId, DaySeries>,
    static_features: BTreeMap<CountyId, BTreeMap<String, f64>>,
    adjacency: BTreeMap<CountyId, BTreeSet<CountyId>>,
}

const PANEL_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PanelDoc {
    version: u32,
    start: Day,
    days: usize,
    series: Vec<DaySeries>,
    static_features: BTreeMap<CountyId, BTreeMap<String, f64>>,
    adjacency: BTreeMap<CountyId, BTreeSet<CountyId>>,
}

impl TryFrom<PanelDoc> for Panel {
    type Error = ModelError;
    fn try_from(doc: PanelDoc) -> Result<Self, Self::Error> {
        if doc.version != PANEL_DOC_VERSION {
            return Err(ModelError::UnsupportedVersion(doc.version));
        }
        let panel = Panel::new(doc.series, doc.static_features, doc.adjacency)?;
        if panel.start != doc.start || panel.days != doc.days {
            return Err(ModelError::InvalidSeries {
                county: panel.series.keys().next().cloned().unwrap_or(CountyId("00000".into())),
                reason: "calendar disagrees with document header".into(),
            });
        }
        Ok(panel)
    }
}

impl From<Panel> for PanelDoc {
    fn from(p: Panel) -> Self {
        PanelDoc {
            version: PANEL_DOC_VERSION,
            start: p.start,
            days: p.days,
            series: p.series.into_values().collect(),
            static_features: p.static_features,
            adjacency: p.adjacency,
        }
    }
}

impl Panel {
    /// Checks every panel invariant: one shared calendar, cleaned series,
    /// symmetric adjacency without self loops, and no orphan references.
    pub fn new(
        series: impl IntoIterator<Item = DaySeries>,
        static_features: BTreeMap<CountyId, BTreeMap<String, f64>>,
        adjacency: BTreeMap<CountyId, BTreeSet<CountyId>>,
    ) -> Result<Self, ModelError> {
        let series: BTreeMap<CountyId, DaySeries> = series.into_iter().map(|s| (s.county.clone(), s)).collect();
        let first = series.values().next().ok_or(ModelError::EmptySeries)?;
        let (start, days) = (first.start, first.len());
        for s in series.values() {
            s.check()?;
            if s.start != start || s.len() != days {
                return Err(ModelError::Misaligned { county: s.county.clone() });
            }
        }
        for c in static_features.keys() {
            if !series.contains_key(c) {
                return Err(ModelError::OrphanCounty(c.clone()));
            }
        }
        for (a, nbrs) in &adjacency {
            if !series.contains_key(a) {
                return Err(ModelError::OrphanCounty(a.clone()));
            }
            for b in nbrs {
                if !series.contains_key(b) {
                    return Err(ModelError::OrphanCounty(b.clone()));
                }
                let back = adjacency.get(b).is_some_and(|s| s.contains(a));
                if a == b || !back {
                    return Err(ModelError::AsymmetricAdjacency { a: a.clone(), b: b.clone() });
                }
            }
        }
        let adjacency = adjacency.into_iter().filter(|(_, n)| !n.is_empty()).collect();
        Ok(Panel { start, days, series, static_features, adjacency })
    }

    pub fn start(&self) -> Day {
        self.start
    }

    pub fn days(&self) -> usize {
        self.days
    }

    /// Last calendar day (inclusive).
    pub fn end(&self) -> Day {
        self.start.offset(self.days as i64 - 1)
    }

    pub fn day(&self, index: usize) -> Day {
        self.start.offset(index as i64)
    }

    /// Index of `day` in the calendar, if covered.
    pub fn day_index(&self, day: Day) -> Option<usize> {
        let i = day.0 as i64 - self.start.0 as i64;
        (0..self.days as i64).contains(&i).then_some(i as usize)
    }

    pub fn county_count(&self) -> usize {
        self.series.len()
    }

    pub fn counties(&self) -> impl Iterator<Item = &CountyId> {
        self.series.keys()
    }

    pub fn series(&self) -> impl Iterator<Item = &DaySeries> {
        self.series.values()
    }

    pub fn get(&self, county: &CountyId) -> Option<&DaySeries> {
        self.series.get(county)
    }

    pub fn deaths(&self, county: &CountyId) -> Option<&[u64]> {
        self.series.get(county).map(|s| s.cum_deaths.as_slice())
    }

    pub fn neighbors(&self, county: &CountyId) -> impl Iterator<Item = &CountyId> {
        self.adjacency.get(county).into_iter().flatten()
    }

    pub fn adjacency(&self) -> &BTreeMap<CountyId, BTreeSet<CountyId>> {
        &self.adjacency
    }

    pub fn features(&self, county: &CountyId) -> Option<&BTreeMap<String, f64>> {
        self.static_features.get(county)
    }

    pub fn feature(&self, county: &CountyId, name: &str) -> Option<f64> {
        self.static_features.get(county)?.get(name).copied()
    }

    pub fn static_features(&self) -> &BTreeMap<CountyId, BTreeMap<String, f64>> {
        &self.static_features
    }

    /// Copy of the panel with every series replaced by `f(series)`.
    /// The result is revalidated.
    pub fn map_series<F>(&self, mut f: F) -> Result<Panel, ModelError>
    where
        F: FnMut(&DaySeries) -> DaySeries,
    {
        Panel::new(
            self.series.values().map(&mut f).collect::<Vec<_>>(),
            self.static_features.clone(),
            self.adjacency.clone(),
        )
    }
}
