//! Run configuration read from TOML.
//!
//! ```toml
//! output_dir = "out"
//! horizons = [5, 7, 14]
//! geometry = "counties.geojson"
//!
//! [fit]
//! k_fit = 7
//!
//! [ensemble]
//! mu = 0.5
//! c = 1.0
//!
//! [[sources]]
//! name = "usafacts"
//! kind = "deaths_cases"
//! path = "deaths_a.csv"
//! priority = 10
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clep::EnsembleConfig;
use crate::ingest::{SourceDescriptor, SourceKind};
use crate::model::{Horizon, MonotoneFixPolicy};
use crate::predictors::FitConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
    Geojson,
    Html,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 4] =
        [ExportFormat::Csv, ExportFormat::Json, ExportFormat::Geojson, ExportFormat::Html];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ExportFormat::Csv),
            "json" => Some(ExportFormat::Json),
            "geojson" => Some(ExportFormat::Geojson),
            "html" => Some(ExportFormat::Html),
            _ => None,
        }
    }
}

fn default_horizons() -> Vec<Horizon> {
    Horizon::CANONICAL.iter().map(|&d| Horizon::new(d).unwrap()).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<ExportFormat> {
    ExportFormat::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sources: Vec<SourceDescriptor>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<Horizon>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<ExportFormat>,
    /// County polygons keyed by a `fips` property, used for the map export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    #[serde(default)]
    pub cleaning: MonotoneFixPolicy,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.sources {
            if let Some(p) = &mut s.path {
                join(p);
            }
        }
        join(&mut self.output_dir);
        if let Some(g) = &mut self.geometry {
            join(g);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fit.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ensemble.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.horizons.is_empty() {
            return Err(ConfigError::Invalid("no horizons".into()));
        }
        if !self.sources.iter().any(|s| s.kind == SourceKind::DeathsCases) {
            return Err(ConfigError::Invalid("no deaths_cases source".into()));
        }
        for s in &self.sources {
            if s.path.is_none() && s.url.is_none() {
                return Err(ConfigError::Invalid(format!("source {} has neither path nor url", s.name)));
            }
        }
        Ok(())
    }

    pub fn sources_of(&self, kind: SourceKind) -> impl Iterator<Item = &SourceDescriptor> {
        self.sources.iter().filter(move |s| s.kind == kind)
    }

    /// Horizons sorted and deduplicated, with `overrides` taking their place
    /// when non-empty.
    pub fn effective_horizons(&self, overrides: &[Horizon]) -> Vec<Horizon> {
        let mut h = if overrides.is_empty() { self.horizons.clone() } else { overrides.to_vec() };
        h.sort();
        h.dedup();
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        horizons = [7, 5]
        [ensemble]
        mu = 0.8
        [[sources]]
        name = "a"
        kind = "deaths_cases"
        path = "a.csv"
        priority = 3
        [[sources]]
        name = "h"
        kind = "hospitals"
        path = "/abs/h.csv"
    "#;

    #[test]
    fn parses_and_resolves() {
        let c = RunConfig::from_toml_str(SAMPLE, Path::new("/data")).unwrap();
        assert_eq!(c.sources[0].path.as_deref(), Some(Path::new("/data/a.csv")));
        assert_eq!(c.sources[1].path.as_deref(), Some(Path::new("/abs/h.csv")));
        assert_eq!(c.output_dir, PathBuf::from("/data/out"));
        assert_eq!(c.ensemble.mu, 0.8);
        assert_eq!(c.ensemble.c, 1.0);
        assert_eq!(c.fit, FitConfig::default());
        assert_eq!(c.formats.len(), 4);
        let h: Vec<usize> = c.effective_horizons(&[]).iter().map(|h| h.days()).collect();
        assert_eq!(h, vec![5, 7]);
    }

    #[test]
    fn rejects_bad_values() {
        let bad_mu = SAMPLE.replace("mu = 0.8", "mu = 1.5");
        assert!(matches!(RunConfig::from_toml_str(&bad_mu, Path::new(".")), Err(ConfigError::Invalid(_))));
        let bad_h = SAMPLE.replace("[7, 5]", "[0]");
        assert!(matches!(RunConfig::from_toml_str(&bad_h, Path::new(".")), Err(ConfigError::Parse(_))));
        let unknown = format!("bogus = 1\n{SAMPLE}");
        assert!(matches!(RunConfig::from_toml_str(&unknown, Path::new(".")), Err(ConfigError::Parse(_))));
        let no_deaths = SAMPLE.replace("deaths_cases", "adjacency");
        assert!(matches!(RunConfig::from_toml_str(&no_deaths, Path::new(".")), Err(ConfigError::Invalid(_))));
    }
}
