//! `clep-forecast`: daily county death forecasts from CSV sources.
//!
//! Exit codes: 0 success, 1 other failure, 2 schema error, 3 I/O error,
//! 4 date outside the panel, 5 no hospitals source, 6 backtest warm-up too
//! short, 7 geometry file missing. Diagnostics go to stderr as one JSON
//! object per line.

mod artifacts;
mod commands;
mod diag;
mod report;
mod sample;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clep_core::config::{ExportFormat, RunConfig};
use clep_core::evalharness::{Regime, SynthSpec};
use clep_core::exec::Execution;
use clep_core::{Day, Horizon};
use serde_json::json;

use crate::artifacts::OutputLock;
use crate::commands::{BacktestInput, Ctx};
use crate::diag::{CliError, Diagnostics, Severity, EXIT_OK, EXIT_OTHER};

#[derive(Parser)]
#[command(
    name = "clep-forecast",
    version,
    about = "County death forecasts with ensemble weights, intervals and hospital severity"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "CLEP_FORECAST_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv,json,geojson,html.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Vec<String>,
    /// Forecast horizon in days; repeat for several.
    #[arg(long = "horizon", global = true)]
    horizons: Vec<u32>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Run on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, merge and clean the sources into a panel.
    Ingest,
    /// Forecast every county at every horizon and update the saved state.
    Forecast(AsOf),
    /// Impute 5-day forecasts to hospitals and assign severity levels.
    Severity(AsOf),
    /// Write the GeoJSON map and the HTML report.
    Export(AsOf),
    /// Ingest, forecast, severity and export.
    Run(AsOf),
    /// Rolling-origin backtest over the panel or a synthetic one.
    Backtest(BacktestArgs),
    /// Write a synthetic sample dataset with a config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct AsOf {
    /// Forecast origin (YYYY-MM-DD); defaults to the last panel day.
    #[arg(long)]
    as_of: Option<Day>,
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long, default_value = "switching")]
    regime: Regime,
    #[arg(long, default_value_t = 50)]
    counties: usize,
    #[arg(long, default_value_t = 60)]
    days: usize,
    /// Log-normal noise sigma.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct BacktestArgs {
    /// First origin scored; defaults to the earliest the warm-up allows.
    #[arg(long)]
    start: Option<Day>,
    /// Last origin scored; defaults to the last day with a full horizon ahead.
    #[arg(long)]
    end: Option<Day>,
    /// Backtest a generated panel instead of the configured sources.
    #[arg(long)]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 120)]
    hospitals: usize,
    #[command(flatten)]
    synth: SynthFlags,
}

fn context(cli: &Cli) -> Result<Ctx, CliError> {
    let config = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let formats = if cli.format.is_empty() {
        config.as_ref().map(|c| c.formats.clone()).unwrap_or_else(|| ExportFormat::ALL.to_vec())
    } else {
        cli.format
            .iter()
            .map(|f| {
                ExportFormat::parse(f.trim())
                    .ok_or_else(|| CliError::new(EXIT_OTHER, "BadFormat", format!("unknown format {f:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let horizons = cli
        .horizons
        .iter()
        .map(|&h| Horizon::new(h).map_err(|e| CliError::new(EXIT_OTHER, "BadHorizon", e.to_string())))
        .collect::<Result<_, _>>()?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    Ok(Ctx { config, out, formats, horizons, exec, diag: Diagnostics { quiet: cli.quiet } })
}

fn spec(f: &SynthFlags) -> SynthSpec {
    SynthSpec {
        regime: f.regime,
        counties: f.counties,
        days: f.days,
        sigma: f.sigma,
        seed: f.seed,
        ..Default::default()
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let ctx = context(cli)?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    match &cli.command {
        Command::Ingest => {
            commands::ingest(&ctx)?;
        }
        Command::Forecast(a) => {
            let doc = commands::forecast(&ctx, a.as_of)?;
            ctx.diag.info(
                "Done",
                "forecast written",
                json!({"as_of": doc.as_of, "rows": doc.rows.len(), "out": ctx.out}),
            );
        }
        Command::Severity(a) => {
            let sev = commands::severity(&ctx, a.as_of)?;
            ctx.diag.info("Done", "severity written", json!({"as_of": sev.as_of, "hospitals": sev.hospitals.len()}));
        }
        Command::Export(a) => {
            let n = commands::export(&ctx, a.as_of)?;
            ctx.diag.info("Done", "map and report written", json!({"features": n}));
        }
        Command::Run(a) => {
            commands::run(&ctx, a.as_of)?;
            ctx.diag.info("Done", "daily run complete", json!({"out": ctx.out}));
        }
        Command::Backtest(b) => {
            let input = if b.synthetic { BacktestInput::Synthetic(spec(&b.synth)) } else { BacktestInput::Config };
            let report = commands::backtest(&ctx, input, b.start, b.end)?;
            if !cli.quiet {
                print!("{}", report.to_table());
            }
        }
        Command::Synth(s) => {
            let sample = sample::SampleSpec {
                counties: s.synth.counties,
                days: s.synth.days,
                hospitals: s.hospitals,
                regime: s.synth.regime,
                sigma: s.synth.sigma,
                seed: s.synth.seed,
            };
            sample::write_sample(&ctx.out, &sample)?;
            ctx.diag.info("Done", "sample dataset written", json!({"out": ctx.out}));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.exit_code() == 0 { EXIT_OK as u8 } else { EXIT_OTHER as u8 });
        }
    };
    let diag = Diagnostics { quiet: cli.quiet };
    match dispatch(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            diag.emit(Severity::Error, &e.code, &e.message, serde_json::Value::Null);
            ExitCode::from(e.exit as u8)
        }
    }
}
