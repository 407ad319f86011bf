//! `split`: train/validation manifest from convert fragments and labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use huwin_core::dataset::{build_manifest, ImageRef, PatientRecord, Source};
use huwin_core::decision::io::read_label_records;
use serde_json::json;

use super::convert::Fragment;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// `fragment.jsonl` files written by convert.
    #[arg(long = "fragments", required = true, num_args = 1..)]
    pub fragments: Vec<PathBuf>,
    /// Labels CSV: `patient_id,label[,annotated]`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Fragments of an auxiliary third-party dataset.
    #[arg(long, num_args = 1.., requires = "third_party_labels")]
    pub third_party_fragments: Vec<PathBuf>,
    #[arg(long)]
    pub third_party_labels: Option<PathBuf>,
}

/// Reads fragments, rewriting image paths relative to each fragment's
/// directory.
fn read_fragments(paths: &[PathBuf]) -> CliResult<BTreeMap<String, Vec<ImageRef>>> {
    let mut out: BTreeMap<String, Vec<ImageRef>> = BTreeMap::new();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Fragment = serde_json::from_str(line)
                .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
            if out.contains_key(&f.patient_id) {
                return Err(CliError::Input(format!("patient {:?} appears in two fragments", f.patient_id)));
            }
            let images = f
                .images
                .into_iter()
                .map(|im| ImageRef {
                    path: base.join(&im.path).to_string_lossy().replace('\\', "/"),
                    ..im
                })
                .collect();
            out.insert(f.patient_id, images);
        }
    }
    Ok(out)
}

fn records(fragments: &[PathBuf], labels: &Path, source: Source) -> CliResult<Vec<PatientRecord>> {
    let mut images = read_fragments(fragments)?;
    let labels = read_label_records(labels).map_err(CliError::input)?;
    let labelled: BTreeSet<&str> = labels.iter().map(|l| l.patient_id.as_str()).collect();
    if let Some(id) = images.keys().find(|id| !labelled.contains(id.as_str())) {
        return Err(CliError::Input(format!("patient {id:?} has images but no label")));
    }
    Ok(labels
        .into_iter()
        .map(|l| PatientRecord {
            images: images.remove(&l.patient_id).unwrap_or_default(),
            patient_id: l.patient_id,
            label: l.label,
            source,
            annotated: l.annotated,
        })
        .collect())
}

pub fn run(args: &SplitArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    let primary = records(&args.fragments, &args.labels, Source::Primary)?;
    let third_party = match &args.third_party_labels {
        Some(labels) => records(&args.third_party_fragments, labels, Source::ThirdParty)?,
        None => Vec::new(),
    };
    let manifest = build_manifest(&primary, &third_party, &cfg.split_config()).map_err(CliError::input)?;
    out.write("manifest.jsonl", manifest.to_jsonl().as_bytes())?;
    out.write("manifest_meta.json", manifest.meta_json().as_bytes())?;
    let weights: BTreeMap<String, f64> = manifest
        .class_weights
        .iter()
        .map(|(c, w)| (c.to_string(), *w))
        .collect();
    println!(
        "train patients {} / val patients {}; {} images; class weights {:?}",
        manifest.patient_split.train.len(),
        manifest.patient_split.val.len(),
        manifest.records.len(),
        weights
    );
    out.log(
        "info",
        "manifest_built",
        json!({
            "images": manifest.records.len(),
            "train_patients": manifest.patient_split.train.len(),
            "val_patients": manifest.patient_split.val.len(),
            "class_weights": weights,
        }),
    );
    Ok(())
}
