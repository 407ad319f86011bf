//! `histogram`: window recommendation by histogram matching.

use std::path::{Path, PathBuf};

use clap::Args;
use huwin_core::histogram::{histogram, ranking_csv, recommend_window, IntensityHistogram};
use huwin_core::hu_norm::{render_grid, to_hu, HuVolume};
use huwin_core::ingest::load_volume;
use huwin_core::lung_seg::{crop, segment_lung, volume_crop_box, CropBox};
use rayon::prelude::*;
use serde_json::json;

use super::find_window;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Debug, Args)]
pub struct HistogramArgs {
    /// Series directory to render under each configured window.
    pub input: PathBuf,
    /// Reference histogram CSV with columns `intensity,count`.
    #[arg(long, conflicts_with = "reference_window")]
    pub reference: Option<PathBuf>,
    /// Build the reference by rendering a volume under this window.
    #[arg(long)]
    pub reference_window: Option<String>,
    /// Volume rendered for --reference-window; defaults to INPUT.
    #[arg(long, requires = "reference_window")]
    pub reference_volume: Option<PathBuf>,
    /// Write one 256-row histogram CSV per candidate window.
    #[arg(long)]
    pub dump_histograms: bool,
}

fn load_hu(path: &Path) -> CliResult<HuVolume> {
    load_volume(path)
        .map(|raw| to_hu(&raw))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn lung_crop(volume: &HuVolume, cfg: &PipelineConfig) -> CliResult<CropBox> {
    let masks = volume
        .slices()
        .par_iter()
        .map(|s| segment_lung(s, &cfg.segmentation))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::input)?;
    volume_crop_box(&masks, cfg.crop_margin).map_err(CliError::input)
}

pub fn run(args: &HistogramArgs, cfg: &PipelineConfig, out: &Output) -> CliResult<()> {
    let volume = load_hu(&args.input)?;
    let crop_box = if cfg.histogram.crop {
        Some(lung_crop(&volume, cfg)?)
    } else {
        None
    };

    let reference = match (&args.reference, &args.reference_window) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            IntensityHistogram::from_csv(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => {
            let window = find_window(cfg, name)?;
            let (ref_volume, ref_crop) = match &args.reference_volume {
                Some(p) => {
                    let v = load_hu(p)?;
                    let c = if cfg.histogram.crop { Some(lung_crop(&v, cfg)?) } else { None };
                    (v, c)
                }
                None => (volume.clone(), crop_box),
            };
            let rendered = ref_volume
                .slices()
                .par_iter()
                .map(|s| match &ref_crop {
                    Some(b) => crop(s, b).map(|s| render_grid(&s, &window)),
                    None => Ok(render_grid(s, &window)),
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::input)?;
            let h = histogram(&rendered).map_err(CliError::input)?;
            out.write("reference_histogram.csv", h.to_csv().as_bytes())?;
            h
        }
        _ => {
            return Err(CliError::Usage(
                "give either --reference or --reference-window".into(),
            ))
        }
    };

    let scores = recommend_window(
        &volume,
        &cfg.windows,
        &reference,
        cfg.histogram.distance,
        crop_box.as_ref(),
    )
    .map_err(CliError::input)?;
    out.write("ranking.csv", ranking_csv(&scores).as_bytes())?;
    if args.dump_histograms {
        for s in &scores {
            out.write(
                &format!("histograms/{}.csv", s.window.name()),
                s.histogram.to_csv().as_bytes(),
            )?;
        }
    }
    for (rank, s) in scores.iter().enumerate() {
        println!("{:>2}. {:<10} {:.6}", rank + 1, s.window.name(), s.distance);
    }
    out.log(
        "info",
        "ranked",
        json!({ "best": scores[0].window.name(), "distance": scores[0].distance }),
    );
    Ok(())
}
