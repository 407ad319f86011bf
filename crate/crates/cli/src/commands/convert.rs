//! `convert`: ingest → HU → segmentation → crop → filter → PNG, per patient.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use huwin_core::dataset::ImageRef;
use huwin_core::hu_norm::{encode_png, render_slice, to_hu, GrayImage, HuVolume};
use huwin_core::ingest::{load_volume, raw::HEADER_FILE};
use huwin_core::lung_seg::{crop_image, segment_lung, volume_crop_box, CropBox, LungMask};
use huwin_core::slice_filter::{combined_filter, FilterVerdict};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::dir_key;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

pub const FRAGMENT_FILE: &str = "fragment.jsonl";
pub const AUDIT_FILE: &str = "filter_audit.jsonl";
pub const REPORT_FILE: &str = "convert_report.json";

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// A directory of per-patient series directories, or one series directory.
    pub input: PathBuf,
    /// Also write each slice's lung mask as a PNG.
    #[arg(long)]
    pub dump_masks: bool,
}

/// One line of `fragment.jsonl`: a converted patient and its kept images.
/// Image paths are relative to the convert output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub patient_id: String,
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub crop_box: CropBox,
    pub images: Vec<ImageRef>,
}

#[derive(Serialize)]
struct AuditLine<'a> {
    patient_id: &'a str,
    window: &'a str,
    roi: CropBox,
    black_threshold_count: f64,
    #[serde(flatten)]
    verdict: &'a FilterVerdict,
}

#[derive(Serialize)]
struct Failure {
    patient_id: String,
    kind: &'static str,
    error: String,
}

/// Why a patient could not be converted. `kind` is the error variant for
/// ingest failures and the pipeline stage otherwise.
struct PatientError {
    kind: &'static str,
    message: String,
}

impl PatientError {
    fn stage(kind: &'static str) -> impl Fn(&dyn std::fmt::Display) -> Self {
        move |e| PatientError {
            kind,
            message: e.to_string(),
        }
    }
}

const OUTPUT_FAILURE: &str = "Output";

#[derive(Serialize)]
struct PatientSummary {
    patient_id: String,
    slices: usize,
    kept: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct Report {
    patients: usize,
    converted: usize,
    images_written: usize,
    summary: Vec<PatientSummary>,
    failed: Vec<Failure>,
}

struct Converted {
    fragment: Fragment,
    audit: Vec<String>,
    kept: BTreeMap<String, usize>,
}

/// Patient series under `input`, keyed by directory name and sorted.
pub fn discover(input: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if !input.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", input.display())));
    }
    if input.join(HEADER_FILE).is_file() {
        return Ok(vec![(dir_key(input), input.to_path_buf())]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && !dir_key(p).starts_with('.'))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Ok(vec![(dir_key(input), input.to_path_buf())]);
    }
    Ok(dirs.into_iter().map(|d| (dir_key(&d), d)).collect())
}

fn convert_patient(
    key: &str,
    dir: &Path,
    cfg: &PipelineConfig,
    out: &Output,
    dump_masks: bool,
) -> Result<Converted, PatientError> {
    let raw = load_volume(dir).map_err(|e| PatientError {
        kind: e.kind(),
        message: e.to_string(),
    })?;
    let seg = PatientError::stage("Segmentation");
    let render = PatientError::stage("Render");
    let write = PatientError::stage(OUTPUT_FAILURE);
    let hu = to_hu(&raw);
    let masks = hu
        .slices()
        .par_iter()
        .map(|s| segment_lung(s, &cfg.segmentation))
        .collect::<Result<Vec<LungMask>, _>>()
        .map_err(|e| seg(&e))?;
    let crop_box = volume_crop_box(&masks, cfg.crop_margin).map_err(|e| seg(&e))?;
    let (rows, cols) = hu.dims();

    if dump_masks {
        masks.par_iter().enumerate().try_for_each(|(i, m)| {
            let png = encode_png(&m.to_gray()).map_err(|e| render(&e))?;
            out.write(&format!("masks/{key}/{key}_{i:04}_mask.png"), &png)
                .map_err(|e| write(&e))
        })?;
    }

    let mut images = Vec::new();
    let mut audit = Vec::new();
    let mut kept = BTreeMap::new();
    for window in &cfg.windows {
        let rendered = render_window(&hu, window, key, &crop_box).map_err(|e| render(&e))?;
        let outcome =
            combined_filter(&masks, &rendered, &cfg.filter).map_err(|e| PatientError::stage("Filter")(&e))?;
        let written = outcome
            .kept
            .par_iter()
            .map(|&i| {
                let image = &rendered[i];
                let rel = format!("png/{key}/{}", image.file_name());
                let png = image.to_png().map_err(|e| render(&e))?;
                out.write(&rel, &png).map_err(|e| write(&e))?;
                Ok(ImageRef {
                    slice_index: i,
                    window: window.name().to_string(),
                    path: rel,
                })
            })
            .collect::<Result<Vec<_>, PatientError>>()?;
        kept.insert(window.name().to_string(), written.len());
        images.extend(written);
        for v in &outcome.verdicts {
            let line = AuditLine {
                patient_id: key,
                window: window.name(),
                roi: outcome.roi,
                black_threshold_count: outcome.black_threshold_count,
                verdict: v,
            };
            audit.push(serde_json::to_string(&line).map_err(|e| write(&e))?);
        }
    }
    images.sort_by(|a, b| (a.slice_index, &a.window).cmp(&(b.slice_index, &b.window)));
    Ok(Converted {
        fragment: Fragment {
            patient_id: key.to_string(),
            slices: hu.num_slices(),
            rows,
            cols,
            crop_box,
            images,
        },
        audit,
        kept,
    })
}

fn render_window(
    hu: &HuVolume,
    window: &huwin_core::hu_norm::HuWindow,
    key: &str,
    crop_box: &CropBox,
) -> Result<Vec<GrayImage>, String> {
    (0..hu.num_slices())
        .into_par_iter()
        .map(|i| {
            let mut image = render_slice(hu, i, window).map_err(|e| e.to_string())?;
            image.patient_id = key.to_string();
            crop_image(&image, crop_box).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn run(args: &ConvertArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    let patients = discover(&args.input)?;
    let results: Vec<(String, Result<Converted, PatientError>)> = patients
        .par_iter()
        .map(|(key, dir)| (key.clone(), convert_patient(key, dir, cfg, out, args.dump_masks)))
        .collect();

    let mut fragments = String::new();
    let mut audit = String::new();
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    let mut images_written = 0;
    let windows: Vec<&str> = cfg.windows.iter().map(|w| w.name()).collect();
    println!("{:<24} {:>6} {}", "patient", "slices", windows.join(" "));
    for (key, result) in results {
        match result {
            Ok(c) => {
                images_written += c.fragment.images.len();
                fragments.push_str(&serde_json::to_string(&c.fragment).map_err(CliError::internal)?);
                fragments.push('\n');
                for line in &c.audit {
                    audit.push_str(line);
                    audit.push('\n');
                }
                let kept: Vec<String> = windows.iter().map(|w| c.kept[*w].to_string()).collect();
                println!("{key:<24} {:>6} {}", c.fragment.slices, kept.join(" "));
                out.log(
                    "info",
                    "patient_converted",
                    json!({ "patient_id": key, "slices": c.fragment.slices, "kept": c.kept }),
                );
                summary.push(PatientSummary {
                    patient_id: key,
                    slices: c.fragment.slices,
                    kept: c.kept,
                });
            }
            Err(PatientError { kind, message }) => {
                println!("{key:<24} failed: {kind}: {message}");
                out.log(
                    "error",
                    "patient_failed",
                    json!({ "patient_id": key, "kind": kind, "error": message }),
                );
                failed.push(Failure {
                    patient_id: key,
                    kind,
                    error: message,
                });
            }
        }
    }
    out.write(FRAGMENT_FILE, fragments.as_bytes())?;
    out.write(AUDIT_FILE, audit.as_bytes())?;
    let report = Report {
        patients: patients.len(),
        converted: summary.len(),
        images_written,
        summary,
        failed,
    };
    out.write_json(REPORT_FILE, &report)?;
    println!(
        "converted {} of {} patients, {} images",
        report.converted, report.patients, images_written
    );
    if report.failed.is_empty() {
        return Ok(());
    }
    let message = format!(
        "{} of {} patients failed; see {REPORT_FILE}",
        report.failed.len(),
        report.patients
    );
    if report.failed.iter().any(|f| f.kind == OUTPUT_FAILURE) {
        Err(CliError::Internal(message))
    } else {
        Err(CliError::Input(message))
    }
}
