use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    decide, pool_by_patient, DecisionError, DecisionRule, PatientDecision, SlicePrediction,
};
use crate::class::Class;

/// Patient-level metrics. Rows of `confusion` are ground truth, columns the
/// decision, both in (COVID, CAP, Normal) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes with no patients in the ground truth.
    pub sensitivity: [Option<f64>; 3],
    pub confusion: [[u64; 3]; 3],
    pub patients: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Result<Self, DecisionError> {
        let patients: u64 = confusion.iter().flatten().sum();
        if patients == 0 {
            return Err(DecisionError::EmptyEvaluation);
        }
        let correct: u64 = (0..3).map(|i| confusion[i][i]).sum();
        let sensitivity = std::array::from_fn(|i| {
            let row: u64 = confusion[i].iter().sum();
            (row > 0).then(|| confusion[i][i] as f64 / row as f64)
        });
        Ok(Self {
            accuracy: correct as f64 / patients as f64,
            sensitivity,
            confusion,
            patients,
        })
    }

    pub fn sensitivity_of(&self, class: Class) -> Option<f64> {
        self.sensitivity[class.index()]
    }
}

/// Scores `decisions` against `labels`. Every decided patient needs a label
/// and every labelled patient needs a decision.
pub fn evaluate(
    decisions: &[PatientDecision],
    labels: &BTreeMap<String, Class>,
) -> Result<EvalReport, DecisionError> {
    let mut confusion = [[0u64; 3]; 3];
    for d in decisions {
        let truth = labels
            .get(&d.patient_id)
            .ok_or_else(|| DecisionError::MissingLabel(d.patient_id.clone()))?;
        confusion[truth.index()][d.decided.index()] += 1;
    }
    if let Some(missing) = labels
        .keys()
        .find(|id| !decisions.iter().any(|d| &d.patient_id == *id))
    {
        return Err(DecisionError::MissingPredictions(missing.clone()));
    }
    EvalReport::from_confusion(confusion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Count,
    Percent,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub th_s: u64,
    pub th_p: f64,
    pub count: EvalReport,
    pub percent: EvalReport,
    pub combined: EvalReport,
}

impl SweepRow {
    pub fn report(&self, mode: SweepMode) -> &EvalReport {
        match mode {
            SweepMode::Count => &self.count,
            SweepMode::Percent => &self.percent,
            SweepMode::Combined => &self.combined,
        }
    }

    pub fn rule(&self, mode: SweepMode) -> DecisionRule {
        match mode {
            SweepMode::Count => DecisionRule::Count { th_s: self.th_s },
            SweepMode::Percent => DecisionRule::Percent { th_p: self.th_p },
            SweepMode::Combined => DecisionRule::Combined {
                th_s: self.th_s,
                th_p: self.th_p,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: SweepMode,
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the best setting for `mode`.
    pub best: usize,
}

impl SweepTable {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("th_s,th_p");
        for mode in ["count", "percent", "combined"] {
            out.push_str(&format!(
                ",{mode}_accuracy,{mode}_sens_covid,{mode}_sens_cap,{mode}_sens_normal"
            ));
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for row in &self.rows {
            out.push_str(&format!("{},{}", row.th_s, row.th_p));
            for r in [&row.count, &row.percent, &row.combined] {
                out.push_str(&format!(",{:.6}", r.accuracy));
                for s in r.sensitivity {
                    out.push(',');
                    out.push_str(&fmt(s));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates every `(th_s, th_p)` pair under all three rule modes. Grid
/// values are sorted and de-duplicated; the best row for `mode` is the first
/// with maximal accuracy, so ties go to smaller `th_s`, then smaller `th_p`.
pub fn sweep_thresholds(
    predictions: &[SlicePrediction],
    labels: &BTreeMap<String, Class>,
    th_s_values: &[u64],
    th_p_values: &[f64],
    mode: SweepMode,
) -> Result<SweepTable, DecisionError> {
    let mut th_s: Vec<u64> = th_s_values.to_vec();
    th_s.sort_unstable();
    th_s.dedup();
    let mut th_p: Vec<f64> = th_p_values.to_vec();
    th_p.sort_by(f64::total_cmp);
    th_p.dedup();
    if th_s.is_empty() || th_p.is_empty() {
        return Err(DecisionError::EmptyGrid);
    }
    let pooled = pool_by_patient(predictions)?;
    let run = |rule: DecisionRule| -> Result<EvalReport, DecisionError> {
        rule.validate()?;
        let decisions = pooled
            .iter()
            .map(|(id, counts)| Ok(PatientDecision::new(id.clone(), *counts, decide(counts, &rule)?)))
            .collect::<Result<Vec<_>, DecisionError>>()?;
        evaluate(&decisions, labels)
    };

    let mut rows = Vec::with_capacity(th_s.len() * th_p.len());
    for &s in &th_s {
        let count = run(DecisionRule::Count { th_s: s })?;
        for &p in &th_p {
            rows.push(SweepRow {
                th_s: s,
                th_p: p,
                count: count.clone(),
                percent: run(DecisionRule::Percent { th_p: p })?,
                combined: run(DecisionRule::Combined { th_s: s, th_p: p })?,
            });
        }
    }
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.report(mode).accuracy > rows[best].report(mode).accuracy {
            best = i;
        }
    }
    Ok(SweepTable { mode, rows, best })
}
