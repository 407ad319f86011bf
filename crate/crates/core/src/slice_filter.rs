//! Closed-lung slice filtering.
//!
//! Two metrics must both pass for a slice to be kept: the segmented lung
//! fraction of the slice, and the number of dark pixels inside a fixed chest
//! ROI compared against a per-patient threshold `(max - min) / factor`.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::hu_norm::GrayImage;
use crate::lung_seg::{CropBox, LungMask};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("no slices to filter")]
    EmptyVolume,
    #[error("factor must be positive and finite, got {0}")]
    InvalidFactor(f64),
    #[error("roi {roi:?} does not fit a {rows}x{cols} image")]
    RoiOutOfBounds { roi: CropBox, rows: usize, cols: usize },
    #[error("images differ in shape")]
    ShapeMismatch,
    #[error("{masks} masks but {images} images")]
    Misaligned { masks: usize, images: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Kept,
    LowLungPercent,
    BelowBlackPixelThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub slice_index: usize,
    /// Absent when only the black-pixel metric was evaluated.
    pub lung_percent: Option<f64>,
    /// Absent when only the lung-percent metric was evaluated.
    pub roi_black_count: Option<usize>,
    pub kept: bool,
    pub reason: FilterReason,
}

/// How the two corner pairs of an ROI are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerOrder {
    /// `(x, y)`: column first.
    #[default]
    ColRow,
    RowCol,
}

/// A rectangle given as two corners on a reference frame, rescaled to the
/// dimensions of the image it is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiSpec {
    pub corner_a: [usize; 2],
    pub corner_b: [usize; 2],
    pub corner_order: CornerOrder,
    pub reference_rows: usize,
    pub reference_cols: usize,
}

impl Default for RoiSpec {
    fn default() -> Self {
        Self {
            corner_a: [120, 240],
            corner_b: [370, 340],
            corner_order: CornerOrder::ColRow,
            reference_rows: 512,
            reference_cols: 512,
        }
    }
}

impl RoiSpec {
    /// Resolves the ROI for a `rows × cols` image. Coordinates are scaled by
    /// `dim / reference_dim` and floored.
    pub fn resolve(&self, rows: usize, cols: usize) -> Result<CropBox, FilterError> {
        let (ra, ca, rb, cb) = match self.corner_order {
            CornerOrder::ColRow => (self.corner_a[1], self.corner_a[0], self.corner_b[1], self.corner_b[0]),
            CornerOrder::RowCol => (self.corner_a[0], self.corner_a[1], self.corner_b[0], self.corner_b[1]),
        };
        let scale_r = |v: usize| v * rows / self.reference_rows.max(1);
        let scale_c = |v: usize| v * cols / self.reference_cols.max(1);
        let roi = CropBox {
            row_min: scale_r(ra.min(rb)),
            row_max: scale_r(ra.max(rb)),
            col_min: scale_c(ca.min(cb)),
            col_max: scale_c(ca.max(cb)),
        };
        if !roi.fits(rows, cols) {
            return Err(FilterError::RoiOutOfBounds { roi, rows, cols });
        }
        Ok(roi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Slices need strictly more than this lung fraction.
    pub min_lung_percent: f64,
    /// Intensities strictly below this count as black.
    pub black_threshold: u8,
    pub factor: f64,
    pub roi: RoiSpec,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            min_lung_percent: 0.10,
            black_threshold: 100,
            factor: 1.5,
            roi: RoiSpec::default(),
        }
    }
}

pub fn lung_fraction(mask: &LungMask) -> f64 {
    mask.lung_pixel_count() as f64 / mask.total_pixels() as f64
}

pub fn lung_percent_filter(slice_index: usize, mask: &LungMask, min_percent: f64) -> FilterVerdict {
    let lung_percent = lung_fraction(mask);
    let kept = lung_percent > min_percent;
    FilterVerdict {
        slice_index,
        lung_percent: Some(lung_percent),
        roi_black_count: None,
        kept,
        reason: if kept { FilterReason::Kept } else { FilterReason::LowLungPercent },
    }
}

pub fn count_black(image: &Grid<u8>, roi: &CropBox, black_threshold: u8) -> Result<usize, FilterError> {
    let (rows, cols) = image.dims();
    if !roi.fits(rows, cols) {
        return Err(FilterError::RoiOutOfBounds { roi: *roi, rows, cols });
    }
    Ok((roi.row_min..=roi.row_max)
        .map(|r| {
            image.row(r)[roi.col_min..=roi.col_max]
                .iter()
                .filter(|&&p| p < black_threshold)
                .count()
        })
        .sum())
}

/// Per-slice count of pixels strictly below `black_threshold` inside `roi`.
pub fn black_pixel_counts(
    images: &[GrayImage],
    roi: &CropBox,
    black_threshold: u8,
) -> Result<Vec<usize>, FilterError> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let dims = first.pixels.dims();
    if images.iter().any(|i| i.pixels.dims() != dims) {
        return Err(FilterError::ShapeMismatch);
    }
    images
        .iter()
        .map(|i| count_black(&i.pixels, roi, black_threshold))
        .collect()
}

/// `(max - min) / factor` over a patient's counts.
pub fn black_pixel_threshold(counts: &[usize], factor: f64) -> Result<f64, FilterError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(FilterError::InvalidFactor(factor));
    }
    let max = *counts.iter().max().ok_or(FilterError::EmptyVolume)?;
    let min = *counts.iter().min().ok_or(FilterError::EmptyVolume)?;
    Ok((max - min) as f64 / factor)
}

/// Keeps slices whose count reaches the threshold; counts below it are
/// filtered. Verdicts are indexed by position in `counts`.
pub fn black_pixel_filter(counts: &[usize], factor: f64) -> Result<Vec<FilterVerdict>, FilterError> {
    let threshold = black_pixel_threshold(counts, factor)?;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let kept = n as f64 >= threshold;
            FilterVerdict {
                slice_index: i,
                lung_percent: None,
                roi_black_count: Some(n),
                kept,
                reason: if kept {
                    FilterReason::Kept
                } else {
                    FilterReason::BelowBlackPixelThreshold
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub verdicts: Vec<FilterVerdict>,
    pub roi: CropBox,
    pub black_threshold_count: f64,
}

/// Applies both metrics. `masks[i]` and `images[i]` must describe the same
/// slice; `images` are the cropped renderings of one window. A slice failing
/// both metrics is reported as [`FilterReason::LowLungPercent`].
pub fn combined_filter(
    masks: &[LungMask],
    images: &[GrayImage],
    params: &FilterParams,
) -> Result<FilterOutcome, FilterError> {
    if masks.len() != images.len() {
        return Err(FilterError::Misaligned {
            masks: masks.len(),
            images: images.len(),
        });
    }
    let first = images.first().ok_or(FilterError::EmptyVolume)?;
    let roi = params.roi.resolve(first.pixels.rows(), first.pixels.cols())?;
    let counts = black_pixel_counts(images, &roi, params.black_threshold)?;
    let threshold = black_pixel_threshold(&counts, params.factor)?;
    let black = black_pixel_filter(&counts, params.factor)?;

    let mut kept = Vec::new();
    let verdicts = masks
        .iter()
        .zip(images)
        .zip(black)
        .map(|((mask, image), black)| {
            let lung = lung_percent_filter(image.slice_index, mask, params.min_lung_percent);
            let reason = if !lung.kept {
                FilterReason::LowLungPercent
            } else {
                black.reason
            };
            let verdict = FilterVerdict {
                slice_index: image.slice_index,
                lung_percent: lung.lung_percent,
                roi_black_count: black.roi_black_count,
                kept: reason == FilterReason::Kept,
                reason,
            };
            if verdict.kept {
                kept.push(verdict.slice_index);
            }
            verdict
        })
        .collect();
    Ok(FilterOutcome {
        kept,
        verdicts,
        roi,
        black_threshold_count: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(pixels: Grid<u8>, slice_index: usize) -> GrayImage {
        GrayImage {
            pixels,
            window_name: "SPGC4".into(),
            patient_id: "p".into(),
            slice_index,
        }
    }

    fn kept_set(verdicts: &[FilterVerdict]) -> Vec<bool> {
        verdicts.iter().map(|v| v.kept).collect()
    }

    #[test]
    fn lung_percent_boundary() {
        let mut n = 0;
        let mask = LungMask::new(Grid::from_fn(512, 512, |_, _| {
            n += 1;
            n <= 26_215
        }));
        assert!(lung_percent_filter(0, &mask, 0.10).kept);
        let mut n = 0;
        let exact = LungMask::new(Grid::from_fn(100, 100, |_, _| {
            n += 1;
            n <= 1000
        }));
        // Exactly 10% is not more than 10%.
        assert_eq!(lung_percent_filter(0, &exact, 0.10).reason, FilterReason::LowLungPercent);
    }

    #[test]
    fn lung_percent_empty_and_full() {
        let empty = lung_percent_filter(3, &LungMask::new(Grid::filled(40, 40, false)), 0.10);
        assert!(!empty.kept);
        assert_eq!(empty.reason, FilterReason::LowLungPercent);
        assert_eq!(empty.slice_index, 3);
        assert!(lung_percent_filter(0, &LungMask::new(Grid::filled(40, 40, true)), 0.10).kept);
    }

    #[test]
    fn default_roi_on_reference_frame() {
        let roi = RoiSpec::default().resolve(512, 512).unwrap();
        assert_eq!(roi, CropBox { row_min: 240, row_max: 340, col_min: 120, col_max: 370 });
        let half = RoiSpec::default().resolve(256, 256).unwrap();
        assert_eq!(half, CropBox { row_min: 120, row_max: 170, col_min: 60, col_max: 185 });
        let swapped = RoiSpec { corner_order: CornerOrder::RowCol, ..RoiSpec::default() }
            .resolve(512, 512)
            .unwrap();
        assert_eq!(swapped, CropBox { row_min: 120, row_max: 370, col_min: 240, col_max: 340 });
    }

    #[test]
    fn black_counts() {
        let roi = CropBox { row_min: 0, row_max: 9, col_min: 0, col_max: 99 };
        let white = image(Grid::filled(20, 100, 255), 0);
        let black = image(Grid::filled(20, 100, 0), 1);
        assert_eq!(black_pixel_counts(&[white, black], &roi, 100).unwrap(), vec![0, 1000]);
        let boundary = image(Grid::filled(20, 100, 100), 0);
        assert_eq!(black_pixel_counts(&[boundary], &roi, 100).unwrap(), vec![0]);
    }

    #[test]
    fn painted_black_pixels_are_counted_exactly() {
        let roi = RoiSpec::default().resolve(128, 128).unwrap();
        let mut g = Grid::filled(128, 128, 200u8);
        let mut painted = 0;
        for r in 0..128 {
            for c in 0..128 {
                if (r * 13 + c * 7) % 11 == 0 {
                    g[(r, c)] = 40;
                    painted += usize::from(roi.contains(r, c));
                }
            }
        }
        assert!(painted > 0);
        assert_eq!(black_pixel_counts(&[image(g, 0)], &roi, 100).unwrap(), vec![painted]);
    }

    #[test]
    fn roi_out_of_bounds() {
        let roi = CropBox { row_min: 0, row_max: 10, col_min: 0, col_max: 10 };
        assert!(matches!(
            black_pixel_counts(&[image(Grid::filled(5, 5, 0), 0)], &roi, 100),
            Err(FilterError::RoiOutOfBounds { .. })
        ));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(kept_set(&black_pixel_filter(&[7, 7, 7], 1.5).unwrap()), vec![true; 3]);
        assert_eq!(black_pixel_threshold(&[0, 300], 1.5).unwrap(), 200.0);
        let v = black_pixel_filter(&[0, 300], 1.5).unwrap();
        assert_eq!(kept_set(&v), vec![false, true]);
        assert_eq!(v[0].reason, FilterReason::BelowBlackPixelThreshold);
        assert_eq!(black_pixel_threshold(&[100, 250, 400], 2.0).unwrap(), 150.0);
        assert_eq!(kept_set(&black_pixel_filter(&[100, 250, 400], 2.0).unwrap()), vec![false, true, true]);
        // Boundary counts are kept.
        assert_eq!(kept_set(&black_pixel_filter(&[0, 150, 300], 2.0).unwrap()), vec![false, true, true]);
    }

    #[test]
    fn threshold_errors() {
        assert_eq!(black_pixel_filter(&[], 1.5), Err(FilterError::EmptyVolume));
        assert_eq!(black_pixel_filter(&[1], 0.0), Err(FilterError::InvalidFactor(0.0)));
    }

    #[test]
    fn combined_uses_and_semantics() {
        let open = LungMask::new(Grid::from_fn(64, 64, |r, _| r < 20));
        let closed = LungMask::new(Grid::filled(64, 64, false));
        let dark = Grid::filled(64, 64, 0u8);
        let bright = Grid::filled(64, 64, 255u8);
        let masks = vec![open.clone(), open.clone(), closed];
        let images = vec![image(dark.clone(), 0), image(bright, 1), image(dark, 2)];
        let out = combined_filter(&masks, &images, &FilterParams::default()).unwrap();
        assert_eq!(out.kept, vec![0]);
        let reasons: Vec<_> = out.verdicts.iter().map(|v| v.reason).collect();
        assert_eq!(
            reasons,
            vec![
                FilterReason::Kept,
                FilterReason::BelowBlackPixelThreshold,
                FilterReason::LowLungPercent
            ]
        );
        assert!(out.verdicts.iter().all(|v| v.kept == (v.reason == FilterReason::Kept)));
    }

    #[test]
    fn combined_requires_alignment() {
        let masks = vec![LungMask::new(Grid::filled(64, 64, true))];
        assert!(matches!(
            combined_filter(&masks, &[], &FilterParams::default()),
            Err(FilterError::Misaligned { .. })
        ));
    }

    proptest! {
        #[test]
        fn duplicating_an_extreme_keeps_verdicts(
            counts in prop::collection::vec(0usize..5000, 1..40),
            factor in 1.0f64..3.0,
            dup_max in any::<bool>(),
        ) {
            let base = black_pixel_filter(&counts, factor).unwrap();
            let extreme = if dup_max { *counts.iter().max().unwrap() } else { *counts.iter().min().unwrap() };
            let mut extended = counts.clone();
            extended.push(extreme);
            let more = black_pixel_filter(&extended, factor).unwrap();
            prop_assert_eq!(
                black_pixel_threshold(&counts, factor).unwrap(),
                black_pixel_threshold(&extended, factor).unwrap()
            );
            prop_assert_eq!(kept_set(&base), kept_set(&more[..counts.len()]));
        }

        #[test]
        fn raising_a_count_never_drops_it(
            counts in prop::collection::vec(0usize..5000, 1..40),
            idx in any::<prop::sample::Index>(),
            bump in 0usize..2000,
            factor in 1.0f64..3.0,
        ) {
            let i = idx.index(counts.len());
            let before = black_pixel_filter(&counts, factor).unwrap();
            let mut raised = counts.clone();
            raised[i] += bump;
            let after = black_pixel_filter(&raised, factor).unwrap();
            prop_assert!(!before[i].kept || after[i].kept);
        }

        #[test]
        fn scaling_counts_scales_threshold(
            counts in prop::collection::vec(0usize..5000, 1..40),
            c in 1usize..8,
            factor in 1.0f64..3.0,
        ) {
            let scaled: Vec<usize> = counts.iter().map(|&n| n * c).collect();
            let t = black_pixel_threshold(&counts, factor).unwrap();
            let ts = black_pixel_threshold(&scaled, factor).unwrap();
            prop_assert!((ts - c as f64 * t).abs() <= 1e-9 * ts.max(1.0));
            prop_assert_eq!(
                kept_set(&black_pixel_filter(&counts, factor).unwrap()),
                kept_set(&black_pixel_filter(&scaled, factor).unwrap())
            );
        }
    }
}
