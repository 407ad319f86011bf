//! Classical lung segmentation and background cropping.
//!
//! Air-density pixels are thresholded, components touching the image border
//! (outside air, table gaps open to the edge) are dropped, the largest
//! interior components are kept and the result is closed and hole-filled.
//! The union of a volume's masks gives one crop box shared by all slices.

pub mod components;
pub mod morphology;

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::hu_norm::GrayImage;
use components::{label_components, Connectivity};

pub const MIN_SEGMENT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegError {
    #[error("slice is {rows}x{cols}, segmentation needs at least {MIN_SEGMENT_DIM}x{MIN_SEGMENT_DIM}")]
    TooSmallImage { rows: usize, cols: usize },
    #[error("no lung pixels in any mask")]
    NoLungFound,
    #[error("crop box {bbox:?} exceeds a {rows}x{cols} image")]
    BoxOutOfBounds { bbox: CropBox, rows: usize, cols: usize },
    #[error("masks differ in shape")]
    ShapeMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Pixels strictly below this HU value are candidate air.
    pub air_threshold_hu: f64,
    pub closing_radius: usize,
    pub keep_largest: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            air_threshold_hu: -320.0,
            closing_radius: 3,
            keep_largest: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LungMask {
    mask: Grid<bool>,
    lung_pixel_count: usize,
}

impl LungMask {
    pub fn new(mask: Grid<bool>) -> Self {
        let lung_pixel_count = mask.as_slice().iter().filter(|&&v| v).count();
        Self {
            mask,
            lung_pixel_count,
        }
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.mask
    }

    pub fn lung_pixel_count(&self) -> usize {
        self.lung_pixel_count
    }

    pub fn total_pixels(&self) -> usize {
        self.mask.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// Tight bounding box of the set pixels, if any.
    pub fn bounding_box(&self) -> Option<CropBox> {
        let mut bbox: Option<CropBox> = None;
        for r in 0..self.mask.rows() {
            for (c, &set) in self.mask.row(r).iter().enumerate() {
                if set {
                    bbox = Some(match bbox {
                        None => CropBox {
                            row_min: r,
                            row_max: r,
                            col_min: c,
                            col_max: c,
                        },
                        Some(b) => b.including(r, c),
                    });
                }
            }
        }
        bbox
    }

    /// 0/255 rendering for mask dumps.
    pub fn to_gray(&self) -> Grid<u8> {
        self.mask.map(|&v| if v { 255 } else { 0 })
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl CropBox {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            row_min: 0,
            row_max: rows.saturating_sub(1),
            col_min: 0,
            col_max: cols.saturating_sub(1),
        }
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.row_min <= self.row_max
            && self.col_min <= self.col_max
            && self.row_max < rows
            && self.col_max < cols
    }

    fn including(self, row: usize, col: usize) -> Self {
        Self {
            row_min: self.row_min.min(row),
            row_max: self.row_max.max(row),
            col_min: self.col_min.min(col),
            col_max: self.col_max.max(col),
        }
    }

    fn union(self, other: Self) -> Self {
        Self {
            row_min: self.row_min.min(other.row_min),
            row_max: self.row_max.max(other.row_max),
            col_min: self.col_min.min(other.col_min),
            col_max: self.col_max.max(other.col_max),
        }
    }
}

/// Segments the lungs of one HU slice.
pub fn segment_lung(hu_slice: &Grid<f64>, params: &SegmentationParams) -> Result<LungMask, SegError> {
    let (rows, cols) = hu_slice.dims();
    if rows < MIN_SEGMENT_DIM || cols < MIN_SEGMENT_DIM {
        return Err(SegError::TooSmallImage { rows, cols });
    }
    let air = hu_slice.map(|&v| v < params.air_threshold_hu);
    let (labels, comps) = label_components(&air, Connectivity::Eight);

    let mut interior: Vec<_> = comps.iter().filter(|c| !c.touches_border).collect();
    // Largest first; equal sizes keep raster order of first appearance.
    interior.sort_by(|a, b| b.size.cmp(&a.size).then(a.label.cmp(&b.label)));
    let mut keep = vec![false; comps.len() + 1];
    for c in interior.into_iter().take(params.keep_largest) {
        keep[c.label as usize] = true;
    }
    let selected = labels.map(|&l| keep[l as usize]);
    let closed = morphology::close(&selected, params.closing_radius);
    Ok(LungMask::new(morphology::fill_holes(&closed)))
}

/// Bounding box over the union of all masks, grown by `margin` and clipped
/// to the image.
pub fn volume_crop_box(masks: &[LungMask], margin: usize) -> Result<CropBox, SegError> {
    let Some(first) = masks.first() else {
        return Err(SegError::NoLungFound);
    };
    let (rows, cols) = first.dims();
    if masks.iter().any(|m| m.dims() != (rows, cols)) {
        return Err(SegError::ShapeMismatch);
    }
    let tight = masks
        .iter()
        .filter_map(LungMask::bounding_box)
        .reduce(CropBox::union)
        .ok_or(SegError::NoLungFound)?;
    Ok(CropBox {
        row_min: tight.row_min.saturating_sub(margin),
        row_max: (tight.row_max + margin).min(rows - 1),
        col_min: tight.col_min.saturating_sub(margin),
        col_max: (tight.col_max + margin).min(cols - 1),
    })
}

/// Copies the pixels inside `bbox`.
pub fn crop<T: Clone>(grid: &Grid<T>, bbox: &CropBox) -> Result<Grid<T>, SegError> {
    let (rows, cols) = grid.dims();
    if !bbox.fits(rows, cols) {
        return Err(SegError::BoxOutOfBounds {
            bbox: *bbox,
            rows,
            cols,
        });
    }
    Ok(Grid::from_fn(bbox.height(), bbox.width(), |r, c| {
        grid[(bbox.row_min + r, bbox.col_min + c)].clone()
    }))
}

pub fn crop_image(image: &GrayImage, bbox: &CropBox) -> Result<GrayImage, SegError> {
    Ok(GrayImage {
        pixels: crop(&image.pixels, bbox)?,
        window_name: image.window_name.clone(),
        patient_id: image.patient_id.clone(),
        slice_index: image.slice_index,
    })
}
