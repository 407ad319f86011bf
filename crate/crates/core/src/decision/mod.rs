//! Slice-to-patient decision fusion.
//!
//! Predictions from every model and every HU window are pooled into one
//! multiset of class votes per patient; no per-image majority vote is taken.
//! The pooled counts go through a five-branch threshold cascade, driven either
//! by absolute slice counts (`th_s`), by per-patient fractions (`th_p`), or by
//! both at once.

mod eval;
pub mod io;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::class::Class;

pub use eval::{evaluate, sweep_thresholds, EvalReport, SweepMode, SweepRow, SweepTable};

#[derive(Debug, thiserror::Error)]
pub enum DecisionError {
    #[error("no predictions for patient {0:?}")]
    EmptyPredictionSet(String),
    #[error("predictions mix patients {0:?} and {1:?}")]
    MixedPatients(String, String),
    #[error("duplicate prediction for patient {patient_id:?} slice {slice_index} model {model_id:?} window {window_name:?}")]
    DuplicatePrediction {
        patient_id: String,
        slice_index: usize,
        model_id: String,
        window_name: String,
    },
    #[error("th_p must lie in [0, 1], got {0}")]
    InvalidPercent(f64),
    #[error("no ground-truth label for patient {0:?}")]
    MissingLabel(String),
    #[error("patient {0:?} is labelled but has no predictions")]
    MissingPredictions(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePrediction {
    pub patient_id: String,
    pub slice_index: usize,
    pub model_id: String,
    pub window_name: String,
    #[serde(rename = "predicted_class")]
    pub predicted: Class,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassCounts {
    pub covid: u64,
    pub cap: u64,
    pub normal: u64,
}

impl ClassCounts {
    pub fn new(covid: u64, cap: u64, normal: u64) -> Self {
        Self { covid, cap, normal }
    }

    pub fn total(&self) -> u64 {
        self.covid + self.cap + self.normal
    }

    pub fn get(&self, class: Class) -> u64 {
        match class {
            Class::Covid => self.covid,
            Class::Cap => self.cap,
            Class::Normal => self.normal,
        }
    }

    pub fn add(&mut self, class: Class) {
        match class {
            Class::Covid => self.covid += 1,
            Class::Cap => self.cap += 1,
            Class::Normal => self.normal += 1,
        }
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self::new(self.covid * k, self.cap * k, self.normal * k)
    }
}

/// Threshold settings for the decision cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecisionRule {
    Count { th_s: u64 },
    Percent { th_p: f64 },
    /// Extension: a class passes only if both its count reaches `th_s` and
    /// its fraction reaches `th_p`.
    Combined { th_s: u64, th_p: f64 },
}

impl DecisionRule {
    pub fn validate(&self) -> Result<(), DecisionError> {
        match *self {
            DecisionRule::Percent { th_p } | DecisionRule::Combined { th_p, .. }
                if !(0.0..=1.0).contains(&th_p) =>
            {
                Err(DecisionError::InvalidPercent(th_p))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientDecision {
    pub patient_id: String,
    pub decided: Class,
    pub n_covid: u64,
    pub n_cap: u64,
    pub n_normal: u64,
    pub total: u64,
}

impl PatientDecision {
    pub fn new(patient_id: impl Into<String>, counts: ClassCounts, decided: Class) -> Self {
        Self {
            patient_id: patient_id.into(),
            decided,
            n_covid: counts.covid,
            n_cap: counts.cap,
            n_normal: counts.normal,
            total: counts.total(),
        }
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts::new(self.n_covid, self.n_cap, self.n_normal)
    }
}

/// Counts the pooled class votes of one patient across all models and
/// windows.
pub fn pool_predictions(predictions: &[SlicePrediction]) -> Result<ClassCounts, DecisionError> {
    let first = predictions
        .first()
        .ok_or_else(|| DecisionError::EmptyPredictionSet(String::new()))?;
    let mut counts = ClassCounts::default();
    for p in predictions {
        if p.patient_id != first.patient_id {
            return Err(DecisionError::MixedPatients(
                first.patient_id.clone(),
                p.patient_id.clone(),
            ));
        }
        counts.add(p.predicted);
    }
    Ok(counts)
}

/// The cascade, given the two strict comparisons and whether each disease
/// class reaches its threshold.
fn cascade(covid_over_cap: bool, cap_over_covid: bool, covid_ok: bool, cap_ok: bool) -> Class {
    if covid_over_cap && cap_ok {
        Class::Covid
    } else if cap_over_covid && covid_ok {
        Class::Cap
    } else if covid_ok {
        Class::Covid
    } else if cap_ok {
        Class::Cap
    } else {
        Class::Normal
    }
}

/// Count-threshold rule. With `th_s = 0` every patient is COVID unless an
/// earlier branch picks CAP.
pub fn decide_count(counts: &ClassCounts, th_s: u64) -> Class {
    cascade(
        counts.covid > counts.cap,
        counts.cap > counts.covid,
        counts.covid >= th_s,
        counts.cap >= th_s,
    )
}

fn fractions(counts: &ClassCounts) -> Result<(f64, f64), DecisionError> {
    let total = counts.total();
    if total == 0 {
        return Err(DecisionError::EmptyPredictionSet(String::new()));
    }
    Ok((
        counts.covid as f64 / total as f64,
        counts.cap as f64 / total as f64,
    ))
}

/// Percent-threshold rule: the cascade over `n(c) / total`.
pub fn decide_percent(counts: &ClassCounts, th_p: f64) -> Result<Class, DecisionError> {
    DecisionRule::Percent { th_p }.validate()?;
    let (covid, cap) = fractions(counts)?;
    Ok(cascade(covid > cap, cap > covid, covid >= th_p, cap >= th_p))
}

pub fn decide_combined(counts: &ClassCounts, th_s: u64, th_p: f64) -> Result<Class, DecisionError> {
    DecisionRule::Combined { th_s, th_p }.validate()?;
    let (covid, cap) = fractions(counts)?;
    Ok(cascade(
        covid > cap,
        cap > covid,
        counts.covid >= th_s && covid >= th_p,
        counts.cap >= th_s && cap >= th_p,
    ))
}

pub fn decide(counts: &ClassCounts, rule: &DecisionRule) -> Result<Class, DecisionError> {
    match *rule {
        DecisionRule::Count { th_s } => Ok(decide_count(counts, th_s)),
        DecisionRule::Percent { th_p } => decide_percent(counts, th_p),
        DecisionRule::Combined { th_s, th_p } => decide_combined(counts, th_s, th_p),
    }
}

/// Groups predictions by patient and pools each group. Rejects repeated
/// `(patient, slice, model, window)` keys.
pub fn pool_by_patient(
    predictions: &[SlicePrediction],
) -> Result<BTreeMap<String, ClassCounts>, DecisionError> {
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut out: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for p in predictions {
        let key = (
            p.patient_id.as_str(),
            p.slice_index,
            p.model_id.as_str(),
            p.window_name.as_str(),
        );
        if !seen.insert(key) {
            return Err(DecisionError::DuplicatePrediction {
                patient_id: p.patient_id.clone(),
                slice_index: p.slice_index,
                model_id: p.model_id.clone(),
                window_name: p.window_name.clone(),
            });
        }
        out.entry(p.patient_id.clone()).or_default().add(p.predicted);
    }
    Ok(out)
}

/// Decides every patient present in `predictions`, ordered by patient id.
pub fn aggregate(
    predictions: &[SlicePrediction],
    rule: &DecisionRule,
) -> Result<Vec<PatientDecision>, DecisionError> {
    rule.validate()?;
    pool_by_patient(predictions)?
        .into_iter()
        .map(|(id, counts)| {
            let decided = decide(&counts, rule)?;
            Ok(PatientDecision::new(id, counts, decided))
        })
        .collect()
}
