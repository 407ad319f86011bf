//! Synthetic chest volumes and prediction streams with known ground truth.
//!
//! A phantom is a tissue disk on an air background holding elliptical lungs.
//! Designated closed slices shrink every lung ellipse so that the lung
//! fraction drops below the closed-lung threshold. Lung masks are analytic:
//! a pixel belongs to an ellipse when its center does.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::decision::SlicePrediction;
use crate::grid::Grid;
use crate::hu_norm::HuVolume;
use crate::ingest::{DicomSlice, PixelRepresentation, RawVolume};
use crate::lung_seg::LungMask;

/// Lung fraction a closed slice must stay under.
pub const CLOSED_LUNG_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom geometry: {0}")]
    InvalidGeometry(String),
    #[error("confusion rates invalid: {0}")]
    InvalidRates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// `(row, col)` in pixel units; pixel `(r, c)` has its center at
    /// `(r + 0.5, c + 0.5)`.
    pub center: (f64, f64),
    /// Semi-axes along rows and columns.
    pub semi_axes: (f64, f64),
    pub hu: f64,
}

impl Ellipse {
    fn contains(&self, r: usize, c: usize, scale: f64) -> bool {
        let dr = (r as f64 + 0.5 - self.center.0) / (self.semi_axes.0 * scale);
        let dc = (c as f64 + 0.5 - self.center.1) / (self.semi_axes.1 * scale);
        dr * dr + dc * dc <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub patient_id: String,
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub body_center: (f64, f64),
    pub body_radius: f64,
    pub body_hu: f64,
    pub background_hu: f64,
    pub lungs: Vec<Ellipse>,
    pub closed_slices: BTreeSet<usize>,
    /// Semi-axis multiplier applied to every lung on closed slices.
    pub closed_scale: f64,
    pub noise_sigma: f64,
    pub slice_thickness: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Two symmetric lungs at −850 HU in a soft-tissue disk, no noise.
    pub fn chest(patient_id: impl Into<String>, slices: usize, rows: usize, cols: usize) -> Self {
        let (h, w) = (rows as f64, cols as f64);
        let lung = |col: f64| Ellipse {
            center: (h * 0.5, w * col),
            semi_axes: (h * 0.24, w * 0.12),
            hu: -850.0,
        };
        Self {
            patient_id: patient_id.into(),
            slices,
            rows,
            cols,
            body_center: (h * 0.5, w * 0.5),
            body_radius: h.min(w) * 0.45,
            body_hu: 40.0,
            background_hu: -1000.0,
            lungs: vec![lung(0.32), lung(0.68)],
            closed_slices: BTreeSet::new(),
            closed_scale: 0.25,
            noise_sigma: 0.0,
            slice_thickness: 1.0,
            seed: 0,
        }
    }

    pub fn with_closed(mut self, closed: impl IntoIterator<Item = usize>) -> Self {
        self.closed_slices = closed.into_iter().collect();
        self
    }

    /// A randomly perturbed two-lung chest. Always passes validation, and
    /// open slices stay above the closed-lung fraction.
    pub fn randomized(patient_id: impl Into<String>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.gen_range(64..=160usize);
        let cols = (rows as f64 * rng.gen_range(0.9..1.1)).round() as usize;
        let mut spec = Self::chest(patient_id, rng.gen_range(3..=8), rows, cols);
        let radius = spec.body_radius;
        let center = spec.body_center;
        spec.body_hu = rng.gen_range(0.0..80.0);
        spec.seed = seed;
        spec.lungs = [-1.0, 1.0]
            .into_iter()
            .map(|side| Ellipse {
                center: (
                    center.0 + radius * rng.gen_range(-0.08..0.08),
                    center.1 + side * radius * rng.gen_range(0.38..0.45),
                ),
                semi_axes: (radius * rng.gen_range(0.40..0.55), radius * rng.gen_range(0.22..0.30)),
                hu: rng.gen_range(-950.0..-600.0),
            })
            .collect();
        spec
    }

    fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidGeometry(m));
        if self.slices == 0 || self.rows == 0 || self.cols == 0 {
            return bad(format!("empty dims {}x{}x{}", self.slices, self.rows, self.cols));
        }
        if self.body_radius.is_nan() || self.body_radius <= 0.0 {
            return bad("body radius must be positive".into());
        }
        if let Some(&s) = self.closed_slices.iter().find(|&&s| s >= self.slices) {
            return bad(format!("closed slice {s} out of range"));
        }
        if !(self.closed_scale > 0.0 && self.closed_scale < 1.0) {
            return bad(format!("closed scale {} outside (0, 1)", self.closed_scale));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        for (i, e) in self.lungs.iter().enumerate() {
            if !(e.semi_axes.0 > 0.0 && e.semi_axes.1 > 0.0) {
                return bad(format!("lung {i} has non-positive axes"));
            }
            let outside = (0..360).any(|deg| {
                let t = f64::from(deg).to_radians();
                let r = e.center.0 + e.semi_axes.0 * t.sin() - self.body_center.0;
                let c = e.center.1 + e.semi_axes.1 * t.cos() - self.body_center.1;
                r.hypot(c) > self.body_radius
            });
            if outside {
                return bad(format!("lung {i} leaves the body disk"));
            }
        }
        if !self.closed_slices.is_empty() {
            let closed = self.lung_mask(self.closed_scale);
            let frac = closed.lung_pixel_count() as f64 / closed.total_pixels() as f64;
            if frac >= CLOSED_LUNG_FRACTION {
                return bad(format!("closed-slice lung fraction {frac:.3} is not below 0.10"));
            }
        }
        Ok(())
    }

    fn lung_mask(&self, scale: f64) -> LungMask {
        LungMask::new(Grid::from_fn(self.rows, self.cols, |r, c| {
            self.lungs.iter().any(|e| e.contains(r, c, scale))
        }))
    }

    fn render(&self, index: usize) -> Grid<f64> {
        let scale = if self.closed_slices.contains(&index) {
            self.closed_scale
        } else {
            1.0
        };
        let mut grid = Grid::from_fn(self.rows, self.cols, |r, c| {
            if let Some(e) = self.lungs.iter().find(|e| e.contains(r, c, scale)) {
                e.hu
            } else {
                let dr = r as f64 + 0.5 - self.body_center.0;
                let dc = c as f64 + 0.5 - self.body_center.1;
                if dr.hypot(dc) <= self.body_radius {
                    self.body_hu
                } else {
                    self.background_hu
                }
            }
        });
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(index as u64);
            let noise = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
            for v in grid.as_mut_slice() {
                *v += noise.sample(&mut rng);
            }
        }
        grid
    }
}

/// `count` distinct slice ordinals out of `0..slices`, chosen with `seed`.
pub fn pick_closed_slices(slices: usize, count: usize, seed: u64) -> Result<BTreeSet<usize>, PhantomError> {
    if count > slices {
        return Err(PhantomError::InvalidGeometry(format!(
            "{count} closed slices requested out of {slices}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, slices, count).into_iter().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: HuVolume,
    /// Analytic lung masks, one per slice.
    pub masks: Vec<LungMask>,
    pub closed: BTreeSet<usize>,
}

/// Renders `spec`. Deterministic in `spec.seed`; slices are generated in
/// parallel on independent RNG streams.
pub fn generate_volume(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let slices: Vec<Grid<f64>> = (0..spec.slices).into_par_iter().map(|i| spec.render(i)).collect();
    let open = spec.lung_mask(1.0);
    let closed = spec.lung_mask(spec.closed_scale);
    let masks = (0..spec.slices)
        .map(|i| {
            if spec.closed_slices.contains(&i) {
                closed.clone()
            } else {
                open.clone()
            }
        })
        .collect();
    let volume = HuVolume::new(slices, Some(spec.slice_thickness), spec.patient_id.clone())
        .map_err(|e| PhantomError::InvalidGeometry(e.to_string()))?;
    Ok(Phantom {
        volume,
        masks,
        closed: spec.closed_slices.clone(),
    })
}

/// Quantizes a HU volume to `int16` stored values with the given rescale,
/// numbering slices from 1.
pub fn to_raw_volume(volume: &HuVolume, slope: f64, intercept: f64) -> RawVolume {
    let slices = volume
        .slices()
        .iter()
        .enumerate()
        .map(|(i, s)| DicomSlice {
            raw_pixels: s.map(|&hu| {
                ((hu - intercept) / slope)
                    .round()
                    .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i32
            }),
            pixel_representation: PixelRepresentation::Signed,
            rescale_slope: slope,
            rescale_intercept: intercept,
            slice_thickness: volume.slice_thickness(),
            instance_number: i as i32 + 1,
            patient_id: volume.patient_id().to_string(),
        })
        .collect();
    RawVolume::new(slices).expect("volume slices are uniform and uniquely numbered")
}

/// Row-stochastic 3×3 matrix: `rates[truth][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRates(pub [[f64; 3]; 3]);

impl ConfusionRates {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Each class keeps `1 - noise` of its mass and spreads `noise` evenly
    /// over the other two classes.
    pub fn symmetric_noise(noise: f64) -> Self {
        let off = noise / 2.0;
        Self(std::array::from_fn(|i| {
            std::array::from_fn(|j| if i == j { 1.0 - noise } else { off })
        }))
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        for (i, row) in self.0.iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(PhantomError::InvalidRates(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(PhantomError::InvalidRates(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    fn draw(&self, truth: Class, u: f64) -> Class {
        let row = &self.0[truth.index()];
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return Class::from_index(j).expect("three classes");
            }
        }
        // u fell into rounding slack at the top of the row.
        let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(truth.index());
        Class::from_index(last).expect("three classes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPatient {
    pub patient_id: String,
    pub label: Class,
    pub slices: usize,
}

/// One prediction per `(patient, slice, model, window)`, each drawn
/// independently from the patient's true-class row of `rates`.
pub fn generate_predictions(
    patients: &[LabeledPatient],
    models: &[String],
    windows: &[String],
    rates: &ConfusionRates,
    seed: u64,
) -> Result<Vec<SlicePrediction>, PhantomError> {
    rates.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in patients {
        for slice_index in 0..p.slices {
            for model in models {
                for window in windows {
                    let u: f64 = rng.gen();
                    out.push(SlicePrediction {
                        patient_id: p.patient_id.clone(),
                        slice_index,
                        model_id: model.clone(),
                        window_name: window.clone(),
                        predicted: rates.draw(p.label, u),
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_ellipse_mask_is_the_rasterization() {
        let mut spec = PhantomSpec::chest("p", 1, 64, 64);
        spec.lungs = vec![Ellipse { center: (32.0, 32.0), semi_axes: (10.0, 6.0), hu: -700.0 }];
        let ph = generate_volume(&spec).unwrap();
        let mut expected = 0;
        for r in 0..64 {
            for c in 0..64 {
                let dr = (r as f64 + 0.5 - 32.0) / 10.0;
                let dc = (c as f64 + 0.5 - 32.0) / 6.0;
                if dr * dr + dc * dc <= 1.0 {
                    expected += 1;
                    assert_eq!(ph.volume.slices()[0][(r, c)], -700.0);
                }
            }
        }
        assert_eq!(ph.masks[0].lung_pixel_count(), expected);
    }

    #[test]
    fn same_seed_same_volume() {
        let mut spec = PhantomSpec::chest("p", 3, 48, 48);
        spec.noise_sigma = 20.0;
        spec.seed = 11;
        assert_eq!(generate_volume(&spec).unwrap(), generate_volume(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 12;
        assert_ne!(generate_volume(&spec).unwrap().volume, generate_volume(&other).unwrap().volume);
    }

    #[test]
    fn closed_slices_fall_below_ten_percent() {
        let spec = PhantomSpec::chest("p", 6, 128, 128).with_closed([0, 5]);
        let ph = generate_volume(&spec).unwrap();
        for (i, m) in ph.masks.iter().enumerate() {
            let frac = m.lung_pixel_count() as f64 / m.total_pixels() as f64;
            if ph.closed.contains(&i) {
                assert!(frac < CLOSED_LUNG_FRACTION, "slice {i}: {frac}");
            } else {
                assert!(frac > CLOSED_LUNG_FRACTION, "slice {i}: {frac}");
            }
        }
    }

    #[test]
    fn invalid_geometry() {
        let spec = PhantomSpec::chest("p", 3, 64, 64).with_closed([3]);
        assert!(matches!(generate_volume(&spec), Err(PhantomError::InvalidGeometry(_))));
        let mut spec = PhantomSpec::chest("p", 3, 64, 64);
        spec.lungs[0].center = (5.0, 5.0);
        assert!(matches!(generate_volume(&spec), Err(PhantomError::InvalidGeometry(_))));
        let mut spec = PhantomSpec::chest("p", 3, 64, 64).with_closed([1]);
        spec.closed_scale = 0.95;
        assert!(matches!(generate_volume(&spec), Err(PhantomError::InvalidGeometry(_))));
    }

    #[test]
    fn randomized_specs_validate() {
        for seed in 0..200 {
            let spec = PhantomSpec::randomized("r", seed).with_closed([0]);
            if let Err(e) = generate_volume(&spec) { panic!("seed {seed}: {e}"); }
        }
    }

    #[test]
    fn closed_slice_picks() {
        let picked = pick_closed_slices(10, 2, 3).unwrap();
        assert_eq!(picked.len(), 2);
        assert!(picked.iter().all(|&s| s < 10));
        assert_eq!(picked, pick_closed_slices(10, 2, 3).unwrap());
        assert!(pick_closed_slices(2, 3, 0).is_err());
    }

    #[test]
    fn raw_volume_round_trips_integer_hu() {
        let ph = generate_volume(&PhantomSpec::chest("p", 2, 40, 40)).unwrap();
        let raw = to_raw_volume(&ph.volume, 1.0, -1024.0);
        assert_eq!(raw.slices()[1].instance_number, 2);
        assert_eq!(crate::hu_norm::to_hu(&raw), ph.volume);
    }

    fn patients(label: Class, n: usize, slices: usize) -> Vec<LabeledPatient> {
        (0..n)
            .map(|i| LabeledPatient { patient_id: format!("{label}{i}"), label, slices })
            .collect()
    }

    #[test]
    fn identity_confusion_reproduces_labels() {
        let mut ps = patients(Class::Covid, 2, 5);
        ps.extend(patients(Class::Cap, 2, 5));
        ps.extend(patients(Class::Normal, 2, 5));
        let models = vec!["a".to_string(), "b".to_string()];
        let windows = vec!["SPGC3".to_string()];
        let preds = generate_predictions(&ps, &models, &windows, &ConfusionRates::identity(), 1).unwrap();
        assert_eq!(preds.len(), 6 * 5 * 2);
        for p in &preds {
            let truth = ps.iter().find(|q| q.patient_id == p.patient_id).unwrap().label;
            assert_eq!(p.predicted, truth);
        }
        assert_eq!(
            preds,
            generate_predictions(&ps, &models, &windows, &ConfusionRates::identity(), 1).unwrap()
        );
    }

    #[test]
    fn binomial_draws_within_three_sigma() {
        let rates = ConfusionRates([[0.9, 0.05, 0.05], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let ps = patients(Class::Covid, 200, 20);
        let preds = generate_predictions(&ps, &["m".into()], &["w".into()], &rates, 42).unwrap();
        let sigma = (20.0f64 * 0.9 * 0.1).sqrt();
        let mut outside = 0;
        for p in &ps {
            let k = preds
                .iter()
                .filter(|x| x.patient_id == p.patient_id && x.predicted == Class::Covid)
                .count() as f64;
            if (k - 18.0).abs() > 3.0 * sigma {
                outside += 1;
            }
        }
        // 3σ two-sided tail is about 0.3% for a normal; allow a little slack
        // for the discrete, skewed binomial.
        assert!(outside <= 4, "{outside} of 200 patients outside 3σ");
        let total = preds.iter().filter(|x| x.predicted == Class::Covid).count() as f64;
        let n = 4000.0;
        assert!((total - 0.9 * n).abs() <= 3.0 * (n * 0.9 * 0.1f64).sqrt());
    }

    #[test]
    fn invalid_rates() {
        let rates = ConfusionRates([[0.5, 0.4, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            generate_predictions(&[], &[], &[], &rates, 0),
            Err(PhantomError::InvalidRates(_))
        ));
        assert!(ConfusionRates::symmetric_noise(0.3).validate().is_ok());
    }
}
