//! `aggregate`, `evaluate` and `sweep`: patient-level decisions from slice
//! predictions.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use huwin_core::decision::io::{decisions_to_csv, read_labels, read_predictions};
use huwin_core::decision::{
    aggregate as aggregate_all, evaluate as score, sweep_thresholds, DecisionRule, EvalReport,
    SlicePrediction, SweepMode,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{DecisionSettings, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Count,
    Percent,
    Combined,
}

impl From<ModeArg> for SweepMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Count => SweepMode::Count,
            ModeArg::Percent => SweepMode::Percent,
            ModeArg::Combined => SweepMode::Combined,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictionArgs {
    /// Prediction files (CSV, or JSON lines for .jsonl/.ndjson/.json). All
    /// files are pooled before deciding.
    #[arg(long = "predictions", required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
}

impl PredictionArgs {
    fn load(&self) -> CliResult<Vec<SlicePrediction>> {
        let mut all = Vec::new();
        for p in &self.predictions {
            all.extend(read_predictions(p).map_err(CliError::input)?);
        }
        Ok(all)
    }
}

/// Overrides for the configured decision rule.
#[derive(Debug, Args)]
pub struct RuleArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Slice-count threshold.
    #[arg(long)]
    pub th_s: Option<u64>,
    /// Slice-fraction threshold in [0, 1].
    #[arg(long)]
    pub th_p: Option<f64>,
}

impl RuleArgs {
    pub fn apply(&self, settings: &mut DecisionSettings) -> CliResult<()> {
        let (mut mode, mut th_s, mut th_p) = match settings.rule {
            DecisionRule::Count { th_s } => (ModeArg::Count, th_s, 0.01),
            DecisionRule::Percent { th_p } => (ModeArg::Percent, 2, th_p),
            DecisionRule::Combined { th_s, th_p } => (ModeArg::Combined, th_s, th_p),
        };
        if let Some(m) = self.mode {
            mode = m;
        } else if self.th_s.is_some() != self.th_p.is_some() {
            // A lone threshold selects its own mode.
            mode = if self.th_s.is_some() { ModeArg::Count } else { ModeArg::Percent };
        }
        th_s = self.th_s.unwrap_or(th_s);
        th_p = self.th_p.unwrap_or(th_p);
        settings.rule = match mode {
            ModeArg::Count => DecisionRule::Count { th_s },
            ModeArg::Percent => DecisionRule::Percent { th_p },
            ModeArg::Combined => DecisionRule::Combined { th_s, th_p },
        };
        Ok(())
    }
}

fn warn_zero_threshold(rule: &DecisionRule, out: &Output) {
    if let DecisionRule::Count { th_s: 0 } | DecisionRule::Combined { th_s: 0, .. } = rule {
        out.log(
            "warn",
            "zero_slice_threshold",
            json!({ "message": "th_s = 0 decides COVID for every patient with no stronger CAP evidence" }),
        );
    }
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub preds: PredictionArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
}

pub fn aggregate(args: &AggregateArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    let rule = cfg.decision.rule;
    warn_zero_threshold(&rule, out);
    let decisions = aggregate_all(&args.preds.load()?, &rule).map_err(CliError::input)?;
    out.write("decisions.csv", decisions_to_csv(&decisions).as_bytes())?;
    for d in &decisions {
        println!("{:<24} {}", d.patient_id, d.decided);
    }
    out.log("info", "aggregated", json!({ "patients": decisions.len(), "rule": rule }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub preds: PredictionArgs,
    /// Labels CSV: `patient_id,label`.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Serialize)]
struct Report<'a> {
    rule: DecisionRule,
    class_order: [&'static str; 3],
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn print_report(r: &EvalReport) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "accuracy {:.4} over {} patients; sensitivity COVID {} CAP {} Normal {}",
        r.accuracy,
        r.patients,
        fmt(r.sensitivity[0]),
        fmt(r.sensitivity[1]),
        fmt(r.sensitivity[2])
    );
}

pub fn evaluate(args: &EvaluateArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    let rule = cfg.decision.rule;
    warn_zero_threshold(&rule, out);
    let labels = read_labels(&args.labels).map_err(CliError::input)?;
    let decisions = aggregate_all(&args.preds.load()?, &rule).map_err(CliError::input)?;
    let report = score(&decisions, &labels).map_err(CliError::input)?;
    out.write("decisions.csv", decisions_to_csv(&decisions).as_bytes())?;
    out.write_json(
        "report.json",
        &Report {
            rule,
            class_order: ["COVID", "CAP", "Normal"],
            report: &report,
        },
    )?;
    print_report(&report);
    out.log("info", "evaluated", json!({ "accuracy": report.accuracy, "rule": rule }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub preds: PredictionArgs,
    /// Labels CSV: `patient_id,label`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Slice-count thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub th_s: Vec<u64>,
    /// Slice-fraction thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub th_p: Vec<f64>,
    /// Mode used to pick the best row.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

impl SweepArgs {
    pub fn apply(&self, settings: &mut DecisionSettings) -> CliResult<()> {
        if !self.th_s.is_empty() {
            settings.sweep_th_s = self.th_s.clone();
        }
        if !self.th_p.is_empty() {
            settings.sweep_th_p = self.th_p.clone();
        }
        if let Some(m) = self.mode {
            settings.sweep_mode = m.into();
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Best<'a> {
    mode: SweepMode,
    rule: DecisionRule,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn sweep(args: &SweepArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    let d = &cfg.decision;
    if d.sweep_th_s.contains(&0) {
        warn_zero_threshold(&DecisionRule::Count { th_s: 0 }, out);
    }
    let labels = read_labels(&args.labels).map_err(CliError::input)?;
    let table = sweep_thresholds(&args.preds.load()?, &labels, &d.sweep_th_s, &d.sweep_th_p, d.sweep_mode)
        .map_err(CliError::input)?;
    out.write("sweep.csv", table.to_csv().as_bytes())?;
    let best = table.best_row();
    out.write_json(
        "sweep_best.json",
        &Best {
            mode: table.mode,
            rule: best.rule(table.mode),
            report: best.report(table.mode),
        },
    )?;
    println!("{:>5} {:>8} {:>8} {:>8} {:>8}", "th_s", "th_p", "count", "percent", "combined");
    for r in &table.rows {
        println!(
            "{:>5} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            r.th_s, r.th_p, r.count.accuracy, r.percent.accuracy, r.combined.accuracy
        );
    }
    out.log(
        "info",
        "swept",
        json!({ "rows": table.rows.len(), "best": best.rule(table.mode), "accuracy": best.report(table.mode).accuracy }),
    );
    Ok(())
}
