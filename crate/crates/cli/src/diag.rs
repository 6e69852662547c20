//! Exit codes and line-delimited JSON diagnostics on stderr.

use std::io::Write;

use clep_core::config::ConfigError;
use clep_core::evalharness::EvalError;
use clep_core::ingest::IngestError;
use clep_core::runner::RunnerError;
use serde::Serialize;
use serde_json::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_OUT_OF_RANGE: i32 = 4;
pub const EXIT_NO_HOSPITALS: i32 = 5;
pub const EXIT_WARMUP: i32 = 6;
pub const EXIT_NO_GEOMETRY: i32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
    Error,
}

#[derive(Serialize)]
struct Line<'a> {
    level: Severity,
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Value::is_null")]
    detail: &'a Value,
}

/// Writes one JSON object per line to stderr. `quiet` drops info and
/// warnings but never errors.
#[derive(Debug, Clone, Copy)]
pub struct Diagnostics {
    pub quiet: bool,
}

impl Diagnostics {
    pub fn emit(&self, level: Severity, code: &str, message: &str, detail: Value) {
        if self.quiet && level != Severity::Error {
            return;
        }
        let line =
            serde_json::to_string(&Line { level, code, message, detail: &detail }).expect("diagnostic serialises");
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    pub fn info(&self, code: &str, message: &str, detail: Value) {
        self.emit(Severity::Info, code, message, detail)
    }

    pub fn warn(&self, code: &str, message: &str, detail: Value) {
        self.emit(Severity::Warn, code, message, detail)
    }
}

/// A failure carrying the process exit code and a diagnostic code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub exit: i32,
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(exit: i32, code: &str, message: impl Into<String>) -> Self {
        CliError { exit, code: code.into(), message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::new(EXIT_IO, "Io", format!("{}: {e}", path.display()))
    }
}

fn variant_name<T: std::fmt::Debug>(v: &T) -> String {
    let s = format!("{v:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let exit = if e.is_schema() { EXIT_SCHEMA } else { EXIT_IO };
        let code = match &e {
            IngestError::Model(m) => variant_name(m),
            other => variant_name(other),
        };
        CliError::new(exit, &code, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let exit = if matches!(e, ConfigError::Io { .. }) { EXIT_IO } else { EXIT_SCHEMA };
        CliError::new(exit, "Config", e.to_string())
    }
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> Self {
        let exit = if matches!(e, RunnerError::OutOfRange(_)) { EXIT_OUT_OF_RANGE } else { EXIT_OTHER };
        CliError::new(exit, &variant_name(&e), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InsufficientWarmup { .. } => CliError::new(EXIT_WARMUP, "InsufficientWarmup", e.to_string()),
            EvalError::OutOfRange { .. } => CliError::new(EXIT_OUT_OF_RANGE, "OutOfRange", e.to_string()),
            EvalError::Runner(r) => r.into(),
        }
    }
}
