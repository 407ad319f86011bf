//! Raw volume container: `volume.json` plus `slice_<n>.raw` blobs holding
//! row-major little-endian `int16` stored values, `<n>` being the instance
//! number.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DicomSlice, IngestError, PixelRepresentation, RawVolume};
use crate::grid::Grid;

pub const HEADER_FILE: &str = "volume.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub rows: usize,
    pub cols: usize,
    pub slope: f64,
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_thickness: Option<f64>,
    pub patient_id: String,
    /// Instance numbers, one per `slice_<n>.raw` file.
    pub slices: Vec<i32>,
}

pub fn slice_file_name(instance_number: i32) -> String {
    format!("slice_{instance_number}.raw")
}

pub fn read_raw_container(directory: &Path) -> Result<RawVolume, IngestError> {
    let header_text = std::fs::read_to_string(directory.join(HEADER_FILE))?;
    let header: ContainerHeader = serde_json::from_str(&header_text)
        .map_err(|e| IngestError::InvalidContainer(e.to_string()))?;
    if header.rows == 0 || header.cols == 0 {
        return Err(IngestError::InvalidContainer(format!(
            "empty geometry {}x{}",
            header.rows, header.cols
        )));
    }
    if header.slope == 0.0 || !header.slope.is_finite() || !header.intercept.is_finite() {
        return Err(IngestError::InvalidContainer(
            "rescale slope must be finite and non-zero".into(),
        ));
    }
    if header.slices.is_empty() {
        return Err(IngestError::EmptySeries(directory.to_path_buf()));
    }
    let expected = header.rows * header.cols * 2;
    let mut slices = Vec::with_capacity(header.slices.len());
    for &n in &header.slices {
        let bytes = std::fs::read(directory.join(slice_file_name(n)))?;
        if bytes.len() != expected {
            return Err(IngestError::PixelCountMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let pixels = bytes
            .chunks_exact(2)
            .map(|p| i32::from(i16::from_le_bytes([p[0], p[1]])))
            .collect();
        slices.push(DicomSlice {
            raw_pixels: Grid::from_vec(header.rows, header.cols, pixels).expect("length checked"),
            pixel_representation: PixelRepresentation::Signed,
            rescale_slope: header.slope,
            rescale_intercept: header.intercept,
            slice_thickness: header.slice_thickness,
            instance_number: n,
            patient_id: header.patient_id.clone(),
        });
    }
    RawVolume::new(slices)
}

/// Encodes `volume` as `(file name, bytes)` pairs, header last. All slices
/// must share slope and intercept and every stored value must fit in `int16`.
pub fn encode_raw_container(volume: &RawVolume) -> Result<Vec<(String, Vec<u8>)>, IngestError> {
    let first = &volume.slices()[0];
    if volume.slices().iter().any(|s| {
        s.rescale_slope != first.rescale_slope || s.rescale_intercept != first.rescale_intercept
    }) {
        return Err(IngestError::InvalidContainer(
            "slices disagree on rescale parameters".into(),
        ));
    }
    let header = ContainerHeader {
        rows: volume.rows(),
        cols: volume.cols(),
        slope: first.rescale_slope,
        intercept: first.rescale_intercept,
        slice_thickness: first.slice_thickness,
        patient_id: volume.patient_id().to_string(),
        slices: volume.slices().iter().map(|s| s.instance_number).collect(),
    };
    let mut files = Vec::with_capacity(volume.len() + 1);
    for s in volume.slices() {
        let mut bytes = Vec::with_capacity(s.raw_pixels.len() * 2);
        for &v in s.raw_pixels.as_slice() {
            let v = i16::try_from(v).map_err(|_| {
                IngestError::InvalidContainer(format!("stored value {v} does not fit int16"))
            })?;
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        files.push((slice_file_name(s.instance_number), bytes));
    }
    let mut text = serde_json::to_string_pretty(&header)
        .map_err(|e| IngestError::InvalidContainer(e.to_string()))?;
    text.push('\n');
    files.push((HEADER_FILE.to_string(), text.into_bytes()));
    Ok(files)
}

/// Writes `volume` as a raw container under `directory`.
pub fn write_raw_container(directory: &Path, volume: &RawVolume) -> Result<(), IngestError> {
    let files = encode_raw_container(volume)?;
    std::fs::create_dir_all(directory)?;
    for (name, bytes) in files {
        std::fs::write(directory.join(name), bytes)?;
    }
    Ok(())
}
