//! 8-bit intensity histograms and HU-window recommendation by histogram
//! matching against a reference dataset.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::hu_norm::{check_windows, render_grid, HuVolume, HuWindow, NormError};
use crate::lung_seg::{crop, CropBox, SegError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HistogramError {
    #[error("no images to histogram")]
    EmptyInput,
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("expected 256 bins, got {0}")]
    BinCount(usize),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Seg(#[from] SegError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityHistogram {
    bins: Vec<u64>,
    total: u64,
}

impl Default for IntensityHistogram {
    fn default() -> Self {
        Self {
            bins: vec![0; 256],
            total: 0,
        }
    }
}

impl IntensityHistogram {
    pub fn from_bins(bins: Vec<u64>) -> Result<Self, HistogramError> {
        if bins.len() != 256 {
            return Err(HistogramError::BinCount(bins.len()));
        }
        let total = bins.iter().sum();
        Ok(Self { bins, total })
    }

    pub fn add_pixels<'a>(&mut self, pixels: impl IntoIterator<Item = &'a u8>) {
        for &p in pixels {
            self.bins[usize::from(p)] += 1;
            self.total += 1;
        }
    }

    pub fn merge(&mut self, other: &IntensityHistogram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn normalized(&self, skip_zero: bool) -> Result<Vec<f64>, HistogramError> {
        let start = usize::from(skip_zero);
        let total: u64 = self.bins[start..].iter().sum();
        if total == 0 {
            return Err(HistogramError::EmptyHistogram);
        }
        Ok(self.bins[start..]
            .iter()
            .map(|&b| b as f64 / total as f64)
            .collect())
    }

    /// CSV with header `intensity,count`, 256 data rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("intensity,count\n");
        for (i, b) in self.bins.iter().enumerate() {
            out.push_str(&format!("{i},{b}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, HistogramError> {
        let mut bins = vec![0u64; 256];
        let mut rows = 0;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for record in reader.records() {
            let record = record.map_err(|_| HistogramError::BinCount(rows))?;
            let intensity: usize = record
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .filter(|&i: &usize| i < 256)
                .ok_or(HistogramError::BinCount(rows))?;
            let count: u64 = record
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or(HistogramError::BinCount(rows))?;
            bins[intensity] = count;
            rows += 1;
        }
        if rows != 256 {
            return Err(HistogramError::BinCount(rows));
        }
        Self::from_bins(bins)
    }
}

/// Pixel counts per intensity over all `images`.
pub fn histogram<'a, I>(images: I) -> Result<IntensityHistogram, HistogramError>
where
    I: IntoIterator<Item = &'a Grid<u8>>,
{
    let mut h = IntensityHistogram::default();
    let mut any = false;
    for img in images {
        any = true;
        h.add_pixels(img.as_slice());
    }
    if !any {
        return Err(HistogramError::EmptyInput);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// `Σ (p - q)² / (p + q)` over bins where `p + q > 0`.
    #[default]
    ChiSquared,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceOptions {
    pub metric: DistanceMetric,
    /// Drop bin 0 (pure black background) before normalizing.
    pub exclude_zero_bin: bool,
}

/// Distance between the normalized forms of `a` and `b`. Symmetric, zero iff
/// the normalized histograms are equal, at most 2.
pub fn histogram_distance(
    a: &IntensityHistogram,
    b: &IntensityHistogram,
    opts: DistanceOptions,
) -> Result<f64, HistogramError> {
    let p = a.normalized(opts.exclude_zero_bin)?;
    let q = b.normalized(opts.exclude_zero_bin)?;
    Ok(match opts.metric {
        DistanceMetric::ChiSquared => p
            .iter()
            .zip(&q)
            .filter(|(x, y)| *x + *y > 0.0)
            .map(|(x, y)| (x - y) * (x - y) / (x + y))
            .sum(),
        DistanceMetric::L1 => p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub window: HuWindow,
    pub distance: f64,
    pub histogram: IntensityHistogram,
}

/// Renders `volume` (optionally cropped) under each candidate and ranks the
/// candidates by histogram distance to `reference`, closest first. Ties keep
/// candidate order.
pub fn recommend_window(
    volume: &HuVolume,
    candidates: &[HuWindow],
    reference: &IntensityHistogram,
    opts: DistanceOptions,
    crop_box: Option<&CropBox>,
) -> Result<Vec<WindowScore>, HistogramError> {
    check_windows(candidates)?;
    let slices: Vec<Grid<f64>> = match crop_box {
        Some(b) => volume
            .slices()
            .iter()
            .map(|s| crop(s, b))
            .collect::<Result<_, _>>()?,
        None => volume.slices().to_vec(),
    };
    let mut scores = candidates
        .iter()
        .map(|w| {
            let rendered: Vec<Grid<u8>> = slices.iter().map(|s| render_grid(s, w)).collect();
            let h = histogram(&rendered)?;
            Ok(WindowScore {
                window: w.clone(),
                distance: histogram_distance(&h, reference, opts)?,
                histogram: h,
            })
        })
        .collect::<Result<Vec<_>, HistogramError>>()?;
    scores.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(scores)
}

/// Ranking table: `rank,window,hu_min,hu_max,distance`.
pub fn ranking_csv(scores: &[WindowScore]) -> String {
    let mut out = String::from("rank,window,hu_min,hu_max,distance\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{:.12}\n",
            i + 1,
            s.window.name(),
            s.window.hu_min(),
            s.window.hu_max(),
            s.distance
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist_of(pixels: &[u8]) -> IntensityHistogram {
        let g = Grid::from_vec(1, pixels.len(), pixels.to_vec()).unwrap();
        histogram([&g]).unwrap()
    }

    #[test]
    fn zero_image() {
        let h = histogram([&Grid::filled(2, 2, 0u8)]).unwrap();
        assert_eq!(h.bins()[0], 4);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn empty_input() {
        let none: Vec<Grid<u8>> = Vec::new();
        assert_eq!(histogram(&none), Err(HistogramError::EmptyInput));
    }

    #[test]
    fn known_multiset() {
        let h = hist_of(&[3, 3, 3, 9, 255, 0, 9]);
        let mut want = vec![0u64; 256];
        want[0] = 1;
        want[3] = 3;
        want[9] = 2;
        want[255] = 1;
        assert_eq!(h.bins(), want.as_slice());
    }

    #[test]
    fn distance_examples() {
        let a = hist_of(&[10, 20, 20, 30]);
        let opts = DistanceOptions::default();
        assert_eq!(histogram_distance(&a, &a, opts).unwrap(), 0.0);
        let b = hist_of(&[10, 10, 40]);
        assert_eq!(
            histogram_distance(&a, &b, opts).unwrap(),
            histogram_distance(&b, &a, opts).unwrap()
        );
        // p = δ_0, q = δ_1: 1²/1 + 1²/1.
        let d = histogram_distance(&hist_of(&[0, 0]), &hist_of(&[1]), opts).unwrap();
        assert_eq!(d, 2.0);
        let l1 = DistanceOptions { metric: DistanceMetric::L1, ..opts };
        assert_eq!(histogram_distance(&hist_of(&[0]), &hist_of(&[1]), l1).unwrap(), 2.0);
    }

    #[test]
    fn scale_of_counts_does_not_matter() {
        let a = hist_of(&[5, 6, 7]);
        let b = hist_of(&[5, 5, 6, 6, 7, 7]);
        assert_eq!(histogram_distance(&a, &b, DistanceOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn zero_bin_exclusion() {
        let a = hist_of(&[0, 0, 0, 0, 50]);
        let b = hist_of(&[50]);
        let opts = DistanceOptions { exclude_zero_bin: true, ..Default::default() };
        assert_eq!(histogram_distance(&a, &b, opts).unwrap(), 0.0);
        assert!(histogram_distance(&a, &b, DistanceOptions::default()).unwrap() > 0.0);
        assert_eq!(
            histogram_distance(&hist_of(&[0]), &b, opts),
            Err(HistogramError::EmptyHistogram)
        );
    }

    #[test]
    fn csv_round_trip() {
        let h = hist_of(&[1, 2, 2, 200]);
        assert_eq!(IntensityHistogram::from_csv(&h.to_csv()).unwrap(), h);
        assert!(IntensityHistogram::from_csv("intensity,count\n0,1\n").is_err());
    }

    fn ramp_volume() -> HuVolume {
        let s = Grid::from_fn(40, 40, |r, c| -1300.0 + 1.2 * (r * 40 + c) as f64);
        HuVolume::new(vec![s.clone(), s.map(|v| v + 17.0)], None, "p").unwrap()
    }

    #[test]
    fn self_match_ranks_first() {
        let vol = ramp_volume();
        let presets = HuWindow::presets();
        for reference_window in &presets {
            let rendered: Vec<_> = vol.slices().iter().map(|s| render_grid(s, reference_window)).collect();
            let reference = histogram(&rendered).unwrap();
            let ranked = recommend_window(&vol, &presets, &reference, Default::default(), None).unwrap();
            assert_eq!(ranked[0].window.name(), reference_window.name());
            assert_eq!(ranked[0].distance, 0.0);
            assert!(ranked.windows(2).all(|w| w[0].distance <= w[1].distance));
        }
    }

    #[test]
    fn single_candidate_is_first() {
        let vol = ramp_volume();
        let reference = hist_of(&[255]);
        let ranked =
            recommend_window(&vol, &[HuWindow::spgc6()], &reference, Default::default(), None).unwrap();
        assert_eq!(ranked.len(), 1);
        assert!(ranked[0].distance > 0.0);
    }

    #[test]
    fn cropped_histograms_only_see_the_box() {
        let vol = ramp_volume();
        let b = CropBox { row_min: 5, row_max: 9, col_min: 0, col_max: 3 };
        let reference = hist_of(&[0]);
        let ranked =
            recommend_window(&vol, &[HuWindow::spgc4()], &reference, Default::default(), Some(&b)).unwrap();
        assert_eq!(ranked[0].histogram.total(), 2 * 20);
    }

    proptest! {
        #[test]
        fn additivity(a in prop::collection::vec(any::<u8>(), 1..200), b in prop::collection::vec(any::<u8>(), 1..200)) {
            let ga = Grid::from_vec(1, a.len(), a.clone()).unwrap();
            let gb = Grid::from_vec(1, b.len(), b.clone()).unwrap();
            let joint = histogram([&ga, &gb]).unwrap();
            let mut sum = histogram([&ga]).unwrap();
            sum.merge(&histogram([&gb]).unwrap());
            prop_assert_eq!(joint.bins().iter().sum::<u64>(), joint.total());
            prop_assert_eq!(joint, sum);
        }

        #[test]
        fn distance_is_bounded_and_symmetric(a in prop::collection::vec(any::<u8>(), 1..100), b in prop::collection::vec(any::<u8>(), 1..100)) {
            let (ha, hb) = (hist_of(&a), hist_of(&b));
            let d = histogram_distance(&ha, &hb, Default::default()).unwrap();
            prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
            prop_assert_eq!(d, histogram_distance(&hb, &ha, Default::default()).unwrap());
        }
    }
}
