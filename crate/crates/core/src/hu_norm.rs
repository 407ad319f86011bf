//! Hounsfield Unit conversion and HU-window rendering.
//!
//! Stored values are rescaled to HU in `f64` and only quantized to 8 bits when
//! a window is applied, so rendering one volume under several windows never
//! compounds rounding.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::ingest::RawVolume;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormError {
    #[error("window {name:?} needs hu_max > hu_min (got {hu_min}..{hu_max})")]
    InvalidWindow { name: String, hu_min: f64, hu_max: f64 },
    #[error("window name {0:?} used more than once")]
    DuplicateWindowName(String),
    #[error("no windows given")]
    NoWindows,
    #[error("slice index {index} out of range for {len} slices")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("png encoding failed: {0}")]
    Png(String),
}

/// A named `(hu_min, hu_max)` normalization range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct HuWindow {
    name: String,
    hu_min: f64,
    hu_max: f64,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    name: String,
    hu_min: f64,
    hu_max: f64,
}

impl TryFrom<WindowRepr> for HuWindow {
    type Error = NormError;

    fn try_from(r: WindowRepr) -> Result<Self, Self::Error> {
        HuWindow::new(r.name, r.hu_min, r.hu_max)
    }
}

impl From<HuWindow> for WindowRepr {
    fn from(w: HuWindow) -> Self {
        WindowRepr {
            name: w.name,
            hu_min: w.hu_min,
            hu_max: w.hu_max,
        }
    }
}

impl HuWindow {
    pub fn new(name: impl Into<String>, hu_min: f64, hu_max: f64) -> Result<Self, NormError> {
        let name = name.into();
        if !(hu_min.is_finite() && hu_max.is_finite() && hu_max > hu_min) {
            return Err(NormError::InvalidWindow { name, hu_min, hu_max });
        }
        Ok(Self { name, hu_min, hu_max })
    }

    /// `[-1000, 400]`
    pub fn spgc3() -> Self {
        Self::preset("SPGC3", -1000.0, 400.0)
    }

    /// `[-1200, 0]`
    pub fn spgc4() -> Self {
        Self::preset("SPGC4", -1200.0, 0.0)
    }

    /// `[-1200, 600]`
    pub fn spgc6() -> Self {
        Self::preset("SPGC6", -1200.0, 600.0)
    }

    /// The three-window augmentation set, in SPGC3, SPGC4, SPGC6 order.
    pub fn presets() -> Vec<HuWindow> {
        vec![Self::spgc3(), Self::spgc4(), Self::spgc6()]
    }

    fn preset(name: &str, hu_min: f64, hu_max: f64) -> Self {
        Self {
            name: name.to_string(),
            hu_min,
            hu_max,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn hu_min(&self) -> f64 {
        self.hu_min
    }

    pub fn hu_max(&self) -> f64 {
        self.hu_max
    }

    /// Maps one HU value to an 8-bit intensity: clamp the window-relative
    /// position to `[0, 1]`, scale by 255 and round half up.
    #[inline]
    pub fn normalize(&self, hu: f64) -> u8 {
        let v = ((hu - self.hu_min) / (self.hu_max - self.hu_min)).clamp(0.0, 1.0);
        (v * 255.0 + 0.5).floor() as u8
    }
}

impl fmt::Display for HuWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}, {}]", self.name, self.hu_min, self.hu_max)
    }
}

/// Free-function form of [`HuWindow::normalize`].
#[inline]
pub fn normalize(hu: f64, window: &HuWindow) -> u8 {
    window.normalize(hu)
}

/// A patient's scan in Hounsfield Units, one grid per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct HuVolume {
    slices: Vec<Grid<f64>>,
    slice_thickness: Option<f64>,
    patient_id: String,
}

impl HuVolume {
    pub fn new(
        slices: Vec<Grid<f64>>,
        slice_thickness: Option<f64>,
        patient_id: impl Into<String>,
    ) -> Result<Self, NormError> {
        let Some(first) = slices.first() else {
            return Err(NormError::InvalidVolume("no slices".into()));
        };
        let dims = first.dims();
        if slices.iter().any(|s| s.dims() != dims) {
            return Err(NormError::InvalidVolume("slices differ in shape".into()));
        }
        if slices.iter().any(|s| s.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(NormError::InvalidVolume("non-finite HU value".into()));
        }
        Ok(Self {
            slices,
            slice_thickness,
            patient_id: patient_id.into(),
        })
    }

    pub fn slices(&self) -> &[Grid<f64>] {
        &self.slices
    }

    pub fn slice(&self, index: usize) -> Result<&Grid<f64>, NormError> {
        self.slices.get(index).ok_or(NormError::IndexOutOfRange {
            index,
            len: self.slices.len(),
        })
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    pub fn slice_thickness(&self) -> Option<f64> {
        self.slice_thickness
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }
}

/// Rescales stored values to HU with each slice's own slope and intercept.
pub fn to_hu(raw: &RawVolume) -> HuVolume {
    let slices = raw
        .slices()
        .iter()
        .map(|s| {
            s.raw_pixels
                .map(|&v| s.rescale_slope * f64::from(v) + s.rescale_intercept)
        })
        .collect();
    HuVolume {
        slices,
        slice_thickness: raw.slices()[0].slice_thickness,
        patient_id: raw.patient_id().to_string(),
    }
}

/// An 8-bit rendering of one slice under one window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub pixels: Grid<u8>,
    pub window_name: String,
    pub patient_id: String,
    pub slice_index: usize,
}

impl GrayImage {
    /// `<patient>_<slice:04>_<window>.png`
    pub fn file_name(&self) -> String {
        png_file_name(&self.patient_id, self.slice_index, &self.window_name)
    }

    /// Encodes as an 8-bit single-channel non-interlaced PNG.
    pub fn to_png(&self) -> Result<Vec<u8>, NormError> {
        encode_png(&self.pixels)
    }
}

pub fn png_file_name(patient_id: &str, slice_index: usize, window_name: &str) -> String {
    format!("{patient_id}_{slice_index:04}_{window_name}.png")
}

pub fn encode_png(pixels: &Grid<u8>) -> Result<Vec<u8>, NormError> {
    use image::ImageEncoder;

    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            pixels.as_slice(),
            pixels.cols() as u32,
            pixels.rows() as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| NormError::Png(e.to_string()))?;
    Ok(out)
}

pub fn render_grid(hu: &Grid<f64>, window: &HuWindow) -> Grid<u8> {
    hu.map(|&v| window.normalize(v))
}

pub fn render_slice(
    volume: &HuVolume,
    slice_index: usize,
    window: &HuWindow,
) -> Result<GrayImage, NormError> {
    let hu = volume.slice(slice_index)?;
    Ok(GrayImage {
        pixels: render_grid(hu, window),
        window_name: window.name().to_string(),
        patient_id: volume.patient_id().to_string(),
        slice_index,
    })
}

/// Rejects an empty window list and repeated window names.
pub fn check_windows(windows: &[HuWindow]) -> Result<(), NormError> {
    if windows.is_empty() {
        return Err(NormError::NoWindows);
    }
    let mut seen = HashSet::new();
    for w in windows {
        if !seen.insert(w.name()) {
            return Err(NormError::DuplicateWindowName(w.name().to_string()));
        }
    }
    Ok(())
}

/// Renders every slice under every window. Output is slice-major, then in
/// the order of `windows`, so it has `num_slices × windows.len()` images.
pub fn augment_windows(
    volume: &HuVolume,
    windows: &[HuWindow],
) -> Result<Vec<GrayImage>, NormError> {
    check_windows(windows)?;
    let images = (0..volume.num_slices())
        .into_par_iter()
        .flat_map_iter(|i| windows.iter().map(move |w| (i, w)))
        .map(|(i, w)| render_slice(volume, i, w))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DicomSlice, PixelRepresentation};
    use proptest::prelude::*;

    fn raw_single(stored: i32, slope: f64, intercept: f64) -> RawVolume {
        RawVolume::new(vec![DicomSlice {
            raw_pixels: Grid::filled(1, 1, stored),
            pixel_representation: PixelRepresentation::Signed,
            rescale_slope: slope,
            rescale_intercept: intercept,
            slice_thickness: None,
            instance_number: 1,
            patient_id: "p".into(),
        }])
        .unwrap()
    }

    fn constant_volume(hu: f64, slices: usize) -> HuVolume {
        HuVolume::new(vec![Grid::filled(8, 8, hu); slices], None, "p").unwrap()
    }

    #[test]
    fn rescale_examples() {
        for (stored, slope, intercept, expected) in [
            (-500, 1.0, 0.0, -500.0),
            (1024, 1.0, -1024.0, 0.0),
            (600, 2.0, -1024.0, 176.0),
        ] {
            let hu = to_hu(&raw_single(stored, slope, intercept));
            assert_eq!(hu.slices()[0][(0, 0)], expected);
        }
    }

    #[test]
    fn normalize_examples() {
        let w = HuWindow::spgc4();
        assert_eq!(w.normalize(-1200.0), 0);
        assert_eq!(w.normalize(0.0), 255);
        assert_eq!(w.normalize(400.0), 255);
        assert_eq!(w.normalize(-600.0), 128);
        assert_eq!(w.normalize(-5000.0), 0);
    }

    #[test]
    fn window_validation() {
        assert!(HuWindow::new("w", 0.0, 0.0).is_err());
        assert!(HuWindow::new("w", 10.0, -10.0).is_err());
        assert!(HuWindow::new("w", f64::NAN, 1.0).is_err());
        let parsed: Result<HuWindow, _> =
            serde_json::from_str(r#"{"name":"bad","hu_min":5,"hu_max":1}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn presets_match_published_ranges() {
        let p = HuWindow::presets();
        let ranges: Vec<(&str, f64, f64)> =
            p.iter().map(|w| (w.name(), w.hu_min(), w.hu_max())).collect();
        assert_eq!(
            ranges,
            vec![
                ("SPGC3", -1000.0, 400.0),
                ("SPGC4", -1200.0, 0.0),
                ("SPGC6", -1200.0, 600.0)
            ]
        );
    }

    #[test]
    fn render_constant_slices() {
        let w = HuWindow::spgc4();
        let low = render_slice(&constant_volume(-1200.0, 1), 0, &w).unwrap();
        assert!(low.pixels.as_slice().iter().all(|&p| p == 0));
        let high = render_slice(&constant_volume(600.0, 1), 0, &w).unwrap();
        assert!(high.pixels.as_slice().iter().all(|&p| p == 255));
        assert_eq!(high.window_name, "SPGC4");
        assert!(matches!(
            render_slice(&constant_volume(0.0, 1), 1, &w),
            Err(NormError::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn ramp_renders_monotone() {
        let ramp = Grid::from_fn(4, 64, |_, c| -1500.0 + 40.0 * c as f64);
        let vol = HuVolume::new(vec![ramp.clone()], None, "p").unwrap();
        for w in HuWindow::presets() {
            let img = render_slice(&vol, 0, &w).unwrap();
            let row = img.pixels.row(2);
            assert!(row.windows(2).all(|p| p[0] <= p[1]));
            for (c, &px) in row.iter().enumerate() {
                assert_eq!(px, w.normalize(ramp[(2, c)]));
            }
        }
    }

    #[test]
    fn augment_cardinality_and_order() {
        let vol = constant_volume(-600.0, 10);
        let images = augment_windows(&vol, &HuWindow::presets()).unwrap();
        assert_eq!(images.len(), 30);
        assert_eq!(
            (images[4].slice_index, images[4].window_name.as_str()),
            (1, "SPGC4")
        );
    }

    #[test]
    fn augment_single_window_equals_render() {
        let vol = HuVolume::new(
            (0..3)
                .map(|k| Grid::from_fn(8, 8, |r, c| (r * 8 + c) as f64 * 30.0 - 1100.0 + k as f64))
                .collect(),
            None,
            "p",
        )
        .unwrap();
        let w = HuWindow::spgc6();
        let images = augment_windows(&vol, std::slice::from_ref(&w)).unwrap();
        let direct: Vec<_> = (0..3).map(|i| render_slice(&vol, i, &w).unwrap()).collect();
        assert_eq!(images, direct);
    }

    #[test]
    fn augment_rejects_duplicates() {
        let vol = constant_volume(0.0, 1);
        assert!(matches!(
            augment_windows(&vol, &[HuWindow::spgc4(), HuWindow::spgc4()]),
            Err(NormError::DuplicateWindowName(_))
        ));
        assert!(matches!(augment_windows(&vol, &[]), Err(NormError::NoWindows)));
    }

    #[test]
    fn png_is_single_channel_and_named() {
        let img = GrayImage {
            pixels: Grid::from_fn(3, 5, |r, c| (r * 5 + c) as u8 * 10),
            window_name: "SPGC3".into(),
            patient_id: "P7".into(),
            slice_index: 12,
        };
        assert_eq!(img.file_name(), "P7_0012_SPGC3.png");
        let bytes = img.to_png().unwrap();
        let decoded = image::load_from_memory(&bytes).unwrap();
        assert_eq!(decoded.color(), image::ColorType::L8);
        assert_eq!(decoded.to_luma8().into_raw(), img.pixels.as_slice());
    }

    proptest! {
        #[test]
        fn normalize_is_monotone(a in -3000.0f64..3000.0, b in -3000.0f64..3000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for w in HuWindow::presets() {
                prop_assert!(w.normalize(lo) <= w.normalize(hi));
            }
        }

        #[test]
        fn window_endpoints(min in -3000i32..2000, width in 1i32..3000, above in 0.0f64..5000.0) {
            let w = HuWindow::new("w", min as f64, (min + width) as f64).unwrap();
            prop_assert_eq!(w.normalize(min as f64), 0);
            prop_assert_eq!(w.normalize((min + width) as f64 + above), 255);
        }

        #[test]
        fn affine_invariance(
            hu in -3000i32..3000,
            scale_pow in -2i32..4,
            shift in -5000i32..5000,
            preset in 0usize..3,
        ) {
            // Powers of two and integer shifts keep every quantity exact.
            let a = 2f64.powi(scale_pow);
            let b = shift as f64;
            let w = &HuWindow::presets()[preset];
            let moved = HuWindow::new("m", a * w.hu_min() + b, a * w.hu_max() + b).unwrap();
            prop_assert_eq!(moved.normalize(a * hu as f64 + b), w.normalize(hu as f64));
        }
    }
}
