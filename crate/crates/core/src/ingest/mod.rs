//! Reading CT series from disk.
//!
//! Two inputs are understood: a minimal uncompressed DICOM subset
//! ([`parse_dicom_file`]) and a raw container made of a `volume.json` header
//! plus one little-endian `int16` blob per slice ([`raw`]).

mod dicom;
pub mod raw;
mod writer;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;

pub use dicom::parse_dicom_file;
pub use writer::{write_dicom, WriteOptions};

pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
    #[error("missing pixel data element (7FE0,0010)")]
    MissingPixelData,
    #[error("pixel data holds {actual} bytes, expected {expected}")]
    PixelCountMismatch { expected: usize, actual: usize },
    #[error("no slices found in {0}")]
    EmptySeries(PathBuf),
    #[error("slice {instance_number} is {rows}x{cols}, series is {expected_rows}x{expected_cols}")]
    InconsistentGeometry {
        instance_number: i32,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("instance number {0} appears more than once")]
    DuplicateSlice(i32),
    #[error("invalid raw container: {0}")]
    InvalidContainer(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<IngestError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    /// Variant name, looking through [`IngestError::File`] wrappers.
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::MalformedHeader(_) => "MalformedHeader",
            IngestError::Truncated { .. } => "Truncated",
            IngestError::UnsupportedTransferSyntax(_) => "UnsupportedTransferSyntax",
            IngestError::UnsupportedPixelFormat(_) => "UnsupportedPixelFormat",
            IngestError::MissingPixelData => "MissingPixelData",
            IngestError::PixelCountMismatch { .. } => "PixelCountMismatch",
            IngestError::EmptySeries(_) => "EmptySeries",
            IngestError::InconsistentGeometry { .. } => "InconsistentGeometry",
            IngestError::DuplicateSlice(_) => "DuplicateSlice",
            IngestError::InvalidContainer(_) => "InvalidContainer",
            IngestError::File { source, .. } => source.kind(),
            IngestError::Io(_) => "Io",
        }
    }
}

/// Whether stored pixel values are two's complement (tag (0028,0103)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PixelRepresentation {
    #[default]
    Unsigned,
    Signed,
}

impl PixelRepresentation {
    pub fn decode(self, lo: u8, hi: u8) -> i32 {
        match self {
            PixelRepresentation::Unsigned => i32::from(u16::from_le_bytes([lo, hi])),
            PixelRepresentation::Signed => i32::from(i16::from_le_bytes([lo, hi])),
        }
    }

    pub fn tag_value(self) -> u16 {
        match self {
            PixelRepresentation::Unsigned => 0,
            PixelRepresentation::Signed => 1,
        }
    }
}

/// One CT slice with the metadata needed for the HU rescale.
///
/// Stored values are widened to `i32` so that both signed and unsigned 16-bit
/// encodings are held losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomSlice {
    pub raw_pixels: Grid<i32>,
    pub pixel_representation: PixelRepresentation,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub slice_thickness: Option<f64>,
    pub instance_number: i32,
    pub patient_id: String,
}

impl DicomSlice {
    pub fn rows(&self) -> usize {
        self.raw_pixels.rows()
    }

    pub fn cols(&self) -> usize {
        self.raw_pixels.cols()
    }
}

/// A patient's series, sorted by ascending instance number.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    slices: Vec<DicomSlice>,
    patient_id: String,
}

impl RawVolume {
    /// Validates geometry and uniqueness, then sorts by instance number.
    /// The patient id is taken from the first slice in ascending order.
    pub fn new(mut slices: Vec<DicomSlice>) -> Result<Self, IngestError> {
        if slices.is_empty() {
            return Err(IngestError::EmptySeries(PathBuf::new()));
        }
        slices.sort_by_key(|s| s.instance_number);
        let mut seen = HashSet::with_capacity(slices.len());
        for s in &slices {
            if !seen.insert(s.instance_number) {
                return Err(IngestError::DuplicateSlice(s.instance_number));
            }
        }
        let (rows, cols) = (slices[0].rows(), slices[0].cols());
        if let Some(bad) = slices.iter().find(|s| s.rows() != rows || s.cols() != cols) {
            return Err(IngestError::InconsistentGeometry {
                instance_number: bad.instance_number,
                rows: bad.rows(),
                cols: bad.cols(),
                expected_rows: rows,
                expected_cols: cols,
            });
        }
        let patient_id = slices[0].patient_id.clone();
        Ok(Self { slices, patient_id })
    }

    pub fn slices(&self) -> &[DicomSlice] {
        &self.slices
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn rows(&self) -> usize {
        self.slices[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.slices[0].cols()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

fn is_dicom_candidate(path: &Path) -> bool {
    let hidden = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_none_or(|n| n.starts_with('.'));
    if hidden || !path.is_file() {
        return false;
    }
    match path.extension().and_then(|e| e.to_str()) {
        None => true,
        Some(ext) => ext.eq_ignore_ascii_case("dcm") || ext.eq_ignore_ascii_case("dicom"),
    }
}

/// Loads one series from `directory`.
///
/// A directory holding `volume.json` is read as a raw container; otherwise
/// every file with a `.dcm`/`.dicom` extension or no extension is parsed as
/// DICOM. Files are parsed in parallel.
pub fn load_volume(directory: &Path) -> Result<RawVolume, IngestError> {
    if directory.join(raw::HEADER_FILE).is_file() {
        return raw::read_raw_container(directory);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(directory)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| is_dicom_candidate(p));
    paths.sort();
    if paths.is_empty() {
        return Err(IngestError::EmptySeries(directory.to_path_buf()));
    }
    let slices = paths
        .par_iter()
        .map(|p| {
            let bytes = std::fs::read(p)?;
            parse_dicom_file(&bytes).map_err(|e| IngestError::File {
                path: p.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    RawVolume::new(slices).map_err(|e| match e {
        IngestError::EmptySeries(_) => IngestError::EmptySeries(directory.to_path_buf()),
        other => other,
    })
}
