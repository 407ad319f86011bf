//! Pipeline configuration. Every field has a default, so `{}` is a valid
//! config file.

use std::path::Path;

use huwin_core::dataset::{SplitConfig, TrainRatios};
use huwin_core::decision::{DecisionRule, SweepMode};
use huwin_core::histogram::DistanceOptions;
use huwin_core::hu_norm::{check_windows, HuWindow};
use huwin_core::lung_seg::SegmentationParams;
use huwin_core::slice_filter::FilterParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub windows: Vec<HuWindow>,
    pub segmentation: SegmentationParams,
    /// Pixels added on each side of the per-volume lung bounding box.
    pub crop_margin: usize,
    pub filter: FilterParams,
    pub split: SplitSettings,
    pub decision: DecisionSettings,
    pub histogram: HistogramSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            windows: HuWindow::presets(),
            segmentation: SegmentationParams::default(),
            crop_margin: 8,
            filter: FilterParams::default(),
            split: SplitSettings::default(),
            decision: DecisionSettings::default(),
            histogram: HistogramSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub ratios: TrainRatios,
    pub normal_shared_slice_fraction: f64,
    pub third_party_cap_ratio: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let d = SplitConfig::default();
        Self {
            ratios: d.ratios,
            normal_shared_slice_fraction: d.normal_shared_slice_fraction,
            third_party_cap_ratio: d.third_party_cap_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionSettings {
    pub rule: DecisionRule,
    pub sweep_th_s: Vec<u64>,
    pub sweep_th_p: Vec<f64>,
    pub sweep_mode: SweepMode,
}

impl Default for DecisionSettings {
    fn default() -> Self {
        Self {
            rule: DecisionRule::Count { th_s: 2 },
            sweep_th_s: vec![2, 5],
            sweep_th_p: vec![0.01, 0.05],
            sweep_mode: SweepMode::Count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct HistogramSettings {
    pub distance: DistanceOptions,
    /// Histogram over the segmented lung crop instead of the full frame.
    pub crop: bool,
}


impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        check_windows(&self.windows).map_err(CliError::input)?;
        self.decision.rule.validate().map_err(CliError::input)?;
        if !(self.filter.factor > 0.0 && self.filter.factor.is_finite()) {
            return Err(CliError::Input(format!("filter factor {} must be positive", self.filter.factor)));
        }
        Ok(())
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            ratios: self.split.ratios,
            seed: self.seed,
            normal_shared_slice_fraction: self.split.normal_shared_slice_fraction,
            third_party_cap_ratio: self.split.third_party_cap_ratio,
        }
    }

    /// Compact JSON with fixed field order; the basis of [`Self::hash`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.filter.factor, 1.5);
        assert_eq!(cfg.filter.min_lung_percent, 0.10);
        assert_eq!(cfg.filter.black_threshold, 100);
        let names: Vec<_> = cfg.windows.iter().map(|w| w.name().to_string()).collect();
        assert_eq!(names, ["SPGC3", "SPGC4", "SPGC6"]);
    }

    #[test]
    fn round_trips_and_hashes_stably() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_windows() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"windos": []}"#).is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"windows": []}"#).unwrap();
        assert!(cfg.validate().is_err());
        let bad = r#"{"windows": [{"name": "w", "hu_min": 5, "hu_max": 5}]}"#;
        assert!(serde_json::from_str::<PipelineConfig>(bad).is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
