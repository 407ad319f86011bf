//! Prediction and label files.
//!
//! Predictions are CSV or JSON lines with the fields `patient_id`,
//! `slice_index`, `model_id`, `window_name`, `predicted_class`. Labels are
//! CSV `patient_id,label`, with an optional third `annotated` column.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecisionError, PatientDecision, SlicePrediction};
use crate::class::Class;

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson") | Some("json")
    )
}

pub fn parse_predictions_csv(text: &str) -> Result<Vec<SlicePrediction>, DecisionError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| DecisionError::Parse(format!("prediction row {}: {e}", i + 1))))
        .collect()
}

pub fn parse_predictions_jsonl(text: &str) -> Result<Vec<SlicePrediction>, DecisionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| DecisionError::Parse(format!("prediction line {}: {e}", i + 1)))
        })
        .collect()
}

/// Reads a prediction file; `.jsonl`/`.ndjson`/`.json` are JSON lines,
/// anything else CSV.
pub fn read_predictions(path: &Path) -> Result<Vec<SlicePrediction>, DecisionError> {
    let text = std::fs::read_to_string(path)?;
    let parsed = if is_jsonl(path) {
        parse_predictions_jsonl(&text)
    } else {
        parse_predictions_csv(&text)
    };
    parsed.map_err(|e| DecisionError::Parse(format!("{}: {e}", path.display())))
}

pub fn predictions_to_csv(predictions: &[SlicePrediction]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in predictions {
        w.serialize(p).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub patient_id: String,
    pub label: Class,
    #[serde(default = "default_annotated")]
    pub annotated: bool,
}

fn default_annotated() -> bool {
    true
}

pub fn parse_label_records(text: &str) -> Result<Vec<LabelRecord>, DecisionError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, r) in reader.deserialize::<LabelRecord>().enumerate() {
        let r = r.map_err(|e| DecisionError::Parse(format!("label row {}: {e}", i + 1)))?;
        if seen.insert(r.patient_id.clone(), ()).is_some() {
            return Err(DecisionError::Parse(format!(
                "patient {:?} labelled twice",
                r.patient_id
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_label_records(path: &Path) -> Result<Vec<LabelRecord>, DecisionError> {
    parse_label_records(&std::fs::read_to_string(path)?)
        .map_err(|e| DecisionError::Parse(format!("{}: {e}", path.display())))
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Class>, DecisionError> {
    Ok(read_label_records(path)?
        .into_iter()
        .map(|r| (r.patient_id, r.label))
        .collect())
}

pub fn labels_to_csv(labels: &BTreeMap<String, Class>) -> String {
    let mut out = String::from("patient_id,label\n");
    for (id, c) in labels {
        out.push_str(&format!("{id},{c}\n"));
    }
    out
}

/// `patient_id,decided,n_covid,n_cap,n_normal,total`
pub fn decisions_to_csv(decisions: &[PatientDecision]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for d in decisions {
        w.serialize(d).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}
