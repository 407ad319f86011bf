//! Writer for the same DICOM subset the parser accepts. Used by the tests and
//! by tools that need small, fully controlled input files.

use super::{DicomSlice, IngestError, EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    /// Emit the 128-byte preamble, `DICM` magic and a file meta group.
    pub preamble: bool,
    pub explicit_vr: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            preamble: true,
            explicit_vr: true,
        }
    }
}

const DS_MAX_LEN: usize = 16;
const SECONDARY_CAPTURE_SOP_CLASS: &str = "1.2.840.10008.5.1.4.1.1.7";

struct ElementWriter {
    out: Vec<u8>,
    explicit: bool,
}

impl ElementWriter {
    fn element(&mut self, group: u16, elem: u16, vr: &[u8; 2], value: &[u8]) {
        debug_assert!(value.len().is_multiple_of(2));
        self.out.extend_from_slice(&group.to_le_bytes());
        self.out.extend_from_slice(&elem.to_le_bytes());
        if self.explicit {
            self.out.extend_from_slice(vr);
            if matches!(vr, b"OB" | b"OW") {
                self.out.extend_from_slice(&[0, 0]);
                self.out.extend_from_slice(&(value.len() as u32).to_le_bytes());
            } else {
                self.out.extend_from_slice(&(value.len() as u16).to_le_bytes());
            }
        } else {
            self.out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        }
        self.out.extend_from_slice(value);
    }

    fn text(&mut self, group: u16, elem: u16, vr: &[u8; 2], value: &str) {
        let mut bytes = value.as_bytes().to_vec();
        if bytes.len() % 2 == 1 {
            bytes.push(if vr == b"UI" { 0 } else { b' ' });
        }
        self.element(group, elem, vr, &bytes);
    }

    fn us(&mut self, group: u16, elem: u16, value: u16) {
        self.element(group, elem, b"US", &value.to_le_bytes());
    }
}

fn decimal_string(v: f64, what: &str) -> Result<String, IngestError> {
    let s = format!("{v}");
    if !v.is_finite() || s.len() > DS_MAX_LEN {
        return Err(IngestError::MalformedHeader(format!(
            "{what} {v} does not fit a decimal string"
        )));
    }
    Ok(s)
}

/// Encodes `slice` as a DICOM file.
///
/// Stored values must fit the slice's pixel representation. Decimal values
/// are written with the shortest representation that parses back to the same
/// `f64`, so values needing more than 16 characters are rejected.
pub fn write_dicom(slice: &DicomSlice, opts: &WriteOptions) -> Result<Vec<u8>, IngestError> {
    let rows = u16::try_from(slice.rows())
        .map_err(|_| IngestError::MalformedHeader("too many rows".into()))?;
    let cols = u16::try_from(slice.cols())
        .map_err(|_| IngestError::MalformedHeader("too many columns".into()))?;
    let signed = slice.pixel_representation == super::PixelRepresentation::Signed;
    let mut pixels = Vec::with_capacity(slice.raw_pixels.len() * 2);
    for &v in slice.raw_pixels.as_slice() {
        let word = if signed {
            i16::try_from(v).map(|x| x as u16)
        } else {
            u16::try_from(v)
        }
        .map_err(|_| IngestError::UnsupportedPixelFormat(format!("stored value {v} out of range")))?;
        pixels.extend_from_slice(&word.to_le_bytes());
    }

    let mut out = Vec::new();
    if opts.preamble {
        let syntax = if opts.explicit_vr {
            EXPLICIT_VR_LITTLE_ENDIAN
        } else {
            IMPLICIT_VR_LITTLE_ENDIAN
        };
        let mut meta = ElementWriter {
            out: Vec::new(),
            explicit: true,
        };
        meta.text(0x0002, 0x0002, b"UI", SECONDARY_CAPTURE_SOP_CLASS);
        meta.text(0x0002, 0x0010, b"UI", syntax);
        out.extend_from_slice(&[0u8; 128]);
        out.extend_from_slice(b"DICM");
        let mut group_len = ElementWriter {
            out: Vec::new(),
            explicit: true,
        };
        group_len.element(0x0002, 0x0000, b"UL", &(meta.out.len() as u32).to_le_bytes());
        out.extend(group_len.out);
        out.extend(meta.out);
    }

    let mut w = ElementWriter {
        out,
        explicit: opts.explicit_vr,
    };
    w.text(0x0010, 0x0020, b"LO", &slice.patient_id);
    if let Some(t) = slice.slice_thickness {
        w.text(0x0018, 0x0050, b"DS", &decimal_string(t, "slice thickness")?);
    }
    w.text(0x0020, 0x0013, b"IS", &slice.instance_number.to_string());
    w.us(0x0028, 0x0002, 1);
    w.text(0x0028, 0x0004, b"CS", "MONOCHROME2");
    w.us(0x0028, 0x0010, rows);
    w.us(0x0028, 0x0011, cols);
    w.us(0x0028, 0x0100, 16);
    w.us(0x0028, 0x0101, 16);
    w.us(0x0028, 0x0102, 15);
    w.us(0x0028, 0x0103, slice.pixel_representation.tag_value());
    w.text(
        0x0028,
        0x1052,
        b"DS",
        &decimal_string(slice.rescale_intercept, "rescale intercept")?,
    );
    w.text(
        0x0028,
        0x1053,
        b"DS",
        &decimal_string(slice.rescale_slope, "rescale slope")?,
    );
    w.element(0x7FE0, 0x0010, b"OW", &pixels);
    Ok(w.out)
}
