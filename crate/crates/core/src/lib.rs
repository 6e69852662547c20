//! County-level cumulative death forecasting.
//!
//! The pipeline, bottom to top:
//!
//! - [`model`]: county identifiers, day series, the aligned [`model::Panel`]
//!   and the monotonicity repair every loader runs.
//! - [`ingest`]: long-form CSV loading, priority merging of overlapping
//!   sources and panel construction.
//! - [`predictors`]: five simple trend baselines (per-county linear and
//!   exponential fits, pooled growth, a demographic log-linear model and a
//!   neighbour-augmented exponential fit).
//! - [`clep`]: the per-county exponentially weighted combination of the
//!   baselines with a forgetting factor.
//! - [`mepi`]: maximum relative error intervals over the previous five
//!   scored days, and coverage.
//! - [`severity`]: proportional imputation of county values to hospitals
//!   and the Low/Medium/High tiering.
//! - [`runner`]: the day-by-day driver shared by backtests and daily runs.
//! - [`evalharness`]: losses, rolling-origin backtests and synthetic panels.
//!
//! Per-county work is data parallel. With the default `parallel` feature
//! it runs on rayon; without it, or with [`exec::Execution::Sequential`],
//! the same code runs on one thread and produces bit-identical results.

pub mod clep;
pub mod config;
pub mod evalharness;
pub mod exec;
pub mod ingest;
pub mod mepi;
pub mod model;
pub mod predictors;
pub mod runner;
pub mod severity;

mod lstsq;

pub use clep::{EnsembleConfig, EnsembleState};
pub use model::{CountyId, Day, DaySeries, Horizon, Panel};
pub use predictors::{FitConfig, PointForecast, PredictorId};
