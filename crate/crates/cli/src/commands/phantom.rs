//! `phantom`: a synthetic labelled cohort with volumes and predictions.

use std::collections::{BTreeMap, BTreeSet};

use clap::{Args, ValueEnum};
use huwin_core::decision::io::{labels_to_csv, predictions_to_csv};
use huwin_core::ingest::raw::encode_raw_container;
use huwin_core::ingest::{write_dicom, WriteOptions};
use huwin_core::phantom::{
    generate_predictions, generate_volume, pick_closed_slices, to_raw_volume, ConfusionRates,
    LabeledPatient, PhantomSpec,
};
use huwin_core::Class;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VolumeFormat {
    /// `volume.json` plus `int16` slice blobs.
    Raw,
    /// One explicit-VR little-endian DICOM file per slice.
    Dicom,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 2)]
    pub patients_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub slices: usize,
    /// Closed-lung slices per patient.
    #[arg(long, default_value_t = 2)]
    pub closed: usize,
    #[arg(long, default_value_t = 128)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    /// Gaussian HU noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Probability that a synthetic slice prediction is wrong, split evenly
    /// over the two other classes.
    #[arg(long, default_value_t = 0.0)]
    pub prediction_noise: f64,
    /// Model names for the synthetic predictions.
    #[arg(long, value_delimiter = ',', default_value = "model_a,model_b,model_c")]
    pub models: Vec<String>,
    #[arg(long, value_enum, default_value = "raw")]
    pub format: VolumeFormat,
}

#[derive(Serialize)]
struct Truth {
    label: Class,
    closed_slices: BTreeSet<usize>,
}

/// Per-patient seed: a fixed odd multiplier keeps neighbouring config seeds
/// from producing overlapping patient streams.
fn patient_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn run(args: &PhantomArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    if !(0.0..=1.0).contains(&args.prediction_noise) {
        return Err(CliError::Usage(format!(
            "--prediction-noise {} outside [0, 1]",
            args.prediction_noise
        )));
    }
    let patients: Vec<LabeledPatient> = Class::ALL
        .iter()
        .flat_map(|&label| {
            (0..args.patients_per_class).map(move |i| LabeledPatient {
                patient_id: format!("{}_{i:03}", label.as_str().to_ascii_lowercase()),
                label,
                slices: args.slices,
            })
        })
        .collect();

    let truth = patients
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = patient_seed(cfg.seed, i);
            let mut spec = PhantomSpec::chest(&p.patient_id, args.slices, args.rows, args.cols);
            spec.closed_slices = pick_closed_slices(args.slices, args.closed, seed).map_err(CliError::input)?;
            spec.noise_sigma = args.noise_sigma;
            spec.seed = seed;
            let phantom = generate_volume(&spec).map_err(CliError::input)?;
            let raw = to_raw_volume(&phantom.volume, 1.0, -1024.0);
            let dir = format!("volumes/{}", p.patient_id);
            match args.format {
                VolumeFormat::Raw => {
                    for (name, bytes) in encode_raw_container(&raw).map_err(CliError::internal)? {
                        out.write(&format!("{dir}/{name}"), &bytes)?;
                    }
                }
                VolumeFormat::Dicom => {
                    for s in raw.slices() {
                        let bytes = write_dicom(s, &WriteOptions::default()).map_err(CliError::internal)?;
                        out.write(&format!("{dir}/{:04}.dcm", s.instance_number), &bytes)?;
                    }
                }
            }
            Ok((
                p.patient_id.clone(),
                Truth {
                    label: p.label,
                    closed_slices: phantom.closed,
                },
            ))
        })
        .collect::<CliResult<BTreeMap<String, Truth>>>()?;

    let windows: Vec<String> = cfg.windows.iter().map(|w| w.name().to_string()).collect();
    let rates = ConfusionRates::symmetric_noise(args.prediction_noise);
    let predictions =
        generate_predictions(&patients, &args.models, &windows, &rates, cfg.seed).map_err(CliError::input)?;
    let labels = patients.iter().map(|p| (p.patient_id.clone(), p.label)).collect();

    out.write("labels.csv", labels_to_csv(&labels).as_bytes())?;
    out.write("predictions.csv", predictions_to_csv(&predictions).as_bytes())?;
    out.write_json("truth.json", &truth)?;
    println!(
        "{} patients x {} slices, {} predictions",
        patients.len(),
        args.slices,
        predictions.len()
    );
    out.log(
        "info",
        "phantom_generated",
        json!({ "patients": patients.len(), "slices": args.slices, "predictions": predictions.len() }),
    );
    Ok(())
}
