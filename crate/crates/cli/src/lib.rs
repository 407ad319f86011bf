//! `huwin`: converts CT series into multi-window PNG datasets and turns
//! slice predictions into patient-level decisions.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Parser)]
#[command(name = "huwin", version, about = "Multi-window CT slice extraction and patient-level decisions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline config (JSON). Built-in defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment, filter and render series to PNG.
    Convert(commands::convert::ConvertArgs),
    /// Rank candidate windows by histogram distance to a reference.
    Histogram(commands::histogram::HistogramArgs),
    /// Build the train/validation manifest.
    Split(commands::split::SplitArgs),
    /// Decide every patient from pooled slice predictions.
    Aggregate(commands::decide::AggregateArgs),
    /// Score patient decisions against labels.
    Evaluate(commands::decide::EvaluateArgs),
    /// Evaluate a grid of decision thresholds.
    Sweep(commands::decide::SweepArgs),
    /// Generate synthetic volumes, labels and predictions.
    Phantom(commands::phantom::PhantomArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Convert(_) => "convert",
            Command::Histogram(_) => "histogram",
            Command::Split(_) => "split",
            Command::Aggregate(_) => "aggregate",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Phantom(_) => "phantom",
        }
    }

    fn apply_overrides(&self, cfg: &mut PipelineConfig) -> CliResult<()> {
        match self {
            Command::Aggregate(a) => a.rule.apply(&mut cfg.decision),
            Command::Evaluate(a) => a.rule.apply(&mut cfg.decision),
            Command::Sweep(a) => a.apply(&mut cfg.decision),
            _ => Ok(()),
        }
    }
}

/// Runs a parsed command line. The output directory always receives the
/// log, the effective config and the run record, even when the command
/// itself fails.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    cli.command.apply_overrides(&mut cfg)?;
    cfg.validate()?;
    let out_dir = cli
        .global
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.workers)
        .build()
        .map_err(CliError::internal)?;
    let out = Output::create(out_dir)?;
    let result = pool.install(|| match &cli.command {
        Command::Convert(a) => commands::convert::run(a, &cfg, &out),
        Command::Histogram(a) => commands::histogram::run(a, &cfg, &out),
        Command::Split(a) => commands::split::run(a, &cfg, &out),
        Command::Aggregate(a) => commands::decide::aggregate(a, &cfg, &out),
        Command::Evaluate(a) => commands::decide::evaluate(a, &cfg, &out),
        Command::Sweep(a) => commands::decide::sweep(a, &cfg, &out),
        Command::Phantom(a) => commands::phantom::run(a, &cfg, &out),
    });
    if let Err(e) = &result {
        out.log("error", "failed", serde_json::json!({ "message": e.to_string(), "exit_code": e.exit_code() }));
    }
    out.finish(cli.command.name(), &cfg)?;
    result
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => 3,
    }
}
