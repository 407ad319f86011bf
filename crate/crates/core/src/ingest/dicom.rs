//! Uncompressed little-endian DICOM subset.
//!
//! Only the elements needed for HU conversion are decoded. Everything else is
//! skipped by its declared length; undefined-length sequences are walked item
//! by item so that nested data sets never desynchronise the reader.

use super::{
    DicomSlice, IngestError, PixelRepresentation, EXPLICIT_VR_LITTLE_ENDIAN,
    IMPLICIT_VR_LITTLE_ENDIAN,
};
use crate::grid::Grid;

const PREAMBLE_LEN: usize = 128;
const MAGIC: &[u8; 4] = b"DICM";
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const MAX_SEQUENCE_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Tag(u16, u16);

const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
const PATIENT_ID: Tag = Tag(0x0010, 0x0020);
const SLICE_THICKNESS: Tag = Tag(0x0018, 0x0050);
const INSTANCE_NUMBER: Tag = Tag(0x0020, 0x0013);
const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
const ROWS: Tag = Tag(0x0028, 0x0010);
const COLUMNS: Tag = Tag(0x0028, 0x0011);
const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
const ITEM: Tag = Tag(0xFFFE, 0xE000);
const ITEM_DELIMITATION: Tag = Tag(0xFFFE, 0xE00D);
const SEQUENCE_DELIMITATION: Tag = Tag(0xFFFE, 0xE0DD);

/// VRs whose explicit encoding uses two reserved bytes and a 32-bit length.
const LONG_VRS: [&[u8; 2]; 13] = [
    b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV",
];
const SHORT_VRS: [&[u8; 2]; 21] = [
    b"AE", b"AS", b"AT", b"CS", b"DA", b"DS", b"DT", b"FD", b"FL", b"IS", b"LO", b"LT", b"PN",
    b"SH", b"SL", b"SS", b"ST", b"TM", b"UI", b"UL", b"US",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VrMode {
    Explicit,
    Implicit,
}

struct Element<'a> {
    tag: Tag,
    vr: Option<[u8; 2]>,
    /// `None` for undefined length.
    value: Option<&'a [u8]>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        if self.remaining() < n {
            return Err(IngestError::Truncated { offset: self.pos });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, IngestError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn peek_group(&self) -> Option<u16> {
        (self.remaining() >= 2).then(|| u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]))
    }

    fn tag(&mut self) -> Result<Tag, IngestError> {
        Ok(Tag(self.u16()?, self.u16()?))
    }

    fn element(&mut self, mode: VrMode) -> Result<Element<'a>, IngestError> {
        let start = self.pos;
        let tag = self.tag()?;
        // Item and delimiter tags never carry a VR.
        if tag.0 == 0xFFFE {
            let len = self.u32()?;
            return self.finish(tag, None, len, start);
        }
        match mode {
            VrMode::Implicit => {
                let len = self.u32()?;
                self.finish(tag, None, len, start)
            }
            VrMode::Explicit => {
                let raw = self.take(2)?;
                let vr = [raw[0], raw[1]];
                let len = if LONG_VRS.contains(&&vr) {
                    self.take(2)?;
                    self.u32()?
                } else if SHORT_VRS.contains(&&vr) {
                    u32::from(self.u16()?)
                } else {
                    return Err(IngestError::MalformedHeader(format!(
                        "invalid VR {:?} for ({:04X},{:04X}) at offset {start}",
                        String::from_utf8_lossy(&vr),
                        tag.0,
                        tag.1
                    )));
                };
                self.finish(tag, Some(vr), len, start)
            }
        }
    }

    fn finish(
        &mut self,
        tag: Tag,
        vr: Option<[u8; 2]>,
        len: u32,
        start: usize,
    ) -> Result<Element<'a>, IngestError> {
        if len == UNDEFINED_LENGTH {
            return Ok(Element { tag, vr, value: None });
        }
        let len = len as usize;
        if self.remaining() < len {
            return Err(IngestError::Truncated { offset: start });
        }
        let value = self.take(len)?;
        Ok(Element {
            tag,
            vr,
            value: Some(value),
        })
    }

    /// Skips an undefined-length sequence whose header was already consumed.
    fn skip_sequence(&mut self, mode: VrMode, depth: usize) -> Result<(), IngestError> {
        if depth > MAX_SEQUENCE_DEPTH {
            return Err(IngestError::MalformedHeader("sequence nesting too deep".into()));
        }
        loop {
            let el = self.element(mode)?;
            match el.tag {
                SEQUENCE_DELIMITATION => return Ok(()),
                ITEM => {
                    if el.value.is_none() {
                        self.skip_item(mode, depth + 1)?;
                    }
                }
                other => {
                    return Err(IngestError::MalformedHeader(format!(
                        "unexpected ({:04X},{:04X}) inside sequence",
                        other.0, other.1
                    )))
                }
            }
        }
    }

    /// Skips the data set of an undefined-length item.
    fn skip_item(&mut self, mode: VrMode, depth: usize) -> Result<(), IngestError> {
        loop {
            let el = self.element(mode)?;
            if el.tag == ITEM_DELIMITATION {
                return Ok(());
            }
            if el.value.is_none() {
                self.skip_sequence(mode, depth + 1)?;
            }
        }
    }
}

fn looks_explicit(buf: &[u8], pos: usize) -> bool {
    buf.get(pos + 4..pos + 6).is_some_and(|vr| {
        let vr = [vr[0], vr[1]];
        LONG_VRS.contains(&&vr) || SHORT_VRS.contains(&&vr)
    })
}

fn text(value: &[u8]) -> String {
    String::from_utf8_lossy(value)
        .trim_matches(|c: char| c == ' ' || c == '\0')
        .to_string()
}

fn first_number<T: std::str::FromStr>(value: &[u8], what: &str) -> Result<T, IngestError> {
    let s = text(value);
    let first = s.split('\\').next().unwrap_or("").trim();
    first
        .parse()
        .map_err(|_| IngestError::MalformedHeader(format!("unparseable {what} value {s:?}")))
}

fn decimal(value: &[u8], what: &str) -> Result<f64, IngestError> {
    let v: f64 = first_number(value, what)?;
    if !v.is_finite() {
        return Err(IngestError::MalformedHeader(format!("non-finite {what}")));
    }
    Ok(v)
}

fn us(value: &[u8], what: &str) -> Result<u16, IngestError> {
    match value {
        [a, b, ..] => Ok(u16::from_le_bytes([*a, *b])),
        _ => Err(IngestError::MalformedHeader(format!(
            "{what} has {} bytes, expected 2",
            value.len()
        ))),
    }
}

fn check_vr(el: &Element<'_>, allowed: &[&[u8; 2]], what: &str) -> Result<(), IngestError> {
    match el.vr {
        Some(vr) if !allowed.contains(&&vr) => Err(IngestError::MalformedHeader(format!(
            "{what} has VR {}",
            String::from_utf8_lossy(&vr)
        ))),
        _ => Ok(()),
    }
}

#[derive(Default)]
struct Fields<'a> {
    patient_id: Option<String>,
    slice_thickness: Option<f64>,
    instance_number: Option<i32>,
    samples_per_pixel: Option<u16>,
    rows: Option<u16>,
    cols: Option<u16>,
    bits_allocated: Option<u16>,
    pixel_representation: Option<u16>,
    intercept: Option<f64>,
    slope: Option<f64>,
    pixel_data: Option<&'a [u8]>,
}

/// Parses one slice from the bytes of a DICOM file.
///
/// The input may carry the 128-byte preamble and `DICM` magic followed by a
/// file meta group, or start directly at the first data element. Only
/// Implicit and Explicit VR Little Endian are accepted; the VR mode of a
/// meta-less stream is inferred from its first element.
pub fn parse_dicom_file(bytes: &[u8]) -> Result<DicomSlice, IngestError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    if bytes.len() >= PREAMBLE_LEN + MAGIC.len() && &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] == MAGIC {
        reader.pos = PREAMBLE_LEN + MAGIC.len();
    } else if bytes.starts_with(MAGIC) {
        reader.pos = MAGIC.len();
    }
    if reader.remaining() < 8 {
        return Err(IngestError::MalformedHeader(
            "too short to hold a data element".into(),
        ));
    }

    let mut transfer_syntax = None;
    if reader.peek_group() == Some(0x0002) {
        if !looks_explicit(bytes, reader.pos) {
            return Err(IngestError::MalformedHeader(
                "file meta group is not explicit VR".into(),
            ));
        }
        while reader.peek_group() == Some(0x0002) {
            let el = reader.element(VrMode::Explicit)?;
            let Some(value) = el.value else {
                return Err(IngestError::MalformedHeader(
                    "undefined length in file meta group".into(),
                ));
            };
            if el.tag == TRANSFER_SYNTAX_UID {
                transfer_syntax = Some(text(value));
            }
        }
    }

    let mode = match transfer_syntax.as_deref() {
        Some(IMPLICIT_VR_LITTLE_ENDIAN) => VrMode::Implicit,
        Some(EXPLICIT_VR_LITTLE_ENDIAN) => VrMode::Explicit,
        Some(other) => return Err(IngestError::UnsupportedTransferSyntax(other.to_string())),
        None if looks_explicit(bytes, reader.pos) => VrMode::Explicit,
        None => VrMode::Implicit,
    };

    let mut f = Fields::default();
    let mut last_tag = None;
    while reader.remaining() > 0 {
        let el = reader.element(mode)?;
        if el.tag.0 == 0xFFFE {
            return Err(IngestError::MalformedHeader(format!(
                "stray item tag ({:04X},{:04X}) at top level",
                el.tag.0, el.tag.1
            )));
        }
        if last_tag.is_some_and(|t| el.tag <= t) {
            return Err(IngestError::MalformedHeader(format!(
                "data element ({:04X},{:04X}) out of order",
                el.tag.0, el.tag.1
            )));
        }
        last_tag = Some(el.tag);
        let Some(value) = el.value else {
            if el.tag == PIXEL_DATA {
                return Err(IngestError::UnsupportedTransferSyntax(
                    "encapsulated pixel data".into(),
                ));
            }
            reader.skip_sequence(mode, 0)?;
            continue;
        };
        match el.tag {
            PATIENT_ID => f.patient_id = Some(text(value)),
            SLICE_THICKNESS => {
                check_vr(&el, &[b"DS"], "Slice Thickness")?;
                if !text(value).is_empty() {
                    f.slice_thickness = Some(decimal(value, "Slice Thickness")?);
                }
            }
            INSTANCE_NUMBER => {
                check_vr(&el, &[b"IS"], "Instance Number")?;
                f.instance_number = Some(first_number(value, "Instance Number")?);
            }
            SAMPLES_PER_PIXEL => {
                check_vr(&el, &[b"US"], "Samples per Pixel")?;
                f.samples_per_pixel = Some(us(value, "Samples per Pixel")?);
            }
            ROWS => {
                check_vr(&el, &[b"US"], "Rows")?;
                f.rows = Some(us(value, "Rows")?);
            }
            COLUMNS => {
                check_vr(&el, &[b"US"], "Columns")?;
                f.cols = Some(us(value, "Columns")?);
            }
            BITS_ALLOCATED => {
                check_vr(&el, &[b"US"], "Bits Allocated")?;
                f.bits_allocated = Some(us(value, "Bits Allocated")?);
            }
            PIXEL_REPRESENTATION => {
                check_vr(&el, &[b"US"], "Pixel Representation")?;
                f.pixel_representation = Some(us(value, "Pixel Representation")?);
            }
            RESCALE_INTERCEPT => {
                check_vr(&el, &[b"DS"], "Rescale Intercept")?;
                f.intercept = Some(decimal(value, "Rescale Intercept")?);
            }
            RESCALE_SLOPE => {
                check_vr(&el, &[b"DS"], "Rescale Slope")?;
                f.slope = Some(decimal(value, "Rescale Slope")?);
            }
            PIXEL_DATA => {
                check_vr(&el, &[b"OW", b"OB"], "Pixel Data")?;
                f.pixel_data = Some(value);
            }
            _ => {}
        }
    }
    build_slice(f)
}

fn build_slice(f: Fields<'_>) -> Result<DicomSlice, IngestError> {
    if let Some(spp) = f.samples_per_pixel.filter(|&s| s != 1) {
        return Err(IngestError::UnsupportedPixelFormat(format!(
            "{spp} samples per pixel"
        )));
    }
    if let Some(bits) = f.bits_allocated.filter(|&b| b != 16) {
        return Err(IngestError::UnsupportedPixelFormat(format!(
            "{bits} bits allocated"
        )));
    }
    let representation = match f.pixel_representation {
        None | Some(0) => PixelRepresentation::Unsigned,
        Some(1) => PixelRepresentation::Signed,
        Some(other) => {
            return Err(IngestError::MalformedHeader(format!(
                "pixel representation {other}"
            )))
        }
    };
    let rows = f
        .rows
        .ok_or_else(|| IngestError::MalformedHeader("missing Rows (0028,0010)".into()))?;
    let cols = f
        .cols
        .ok_or_else(|| IngestError::MalformedHeader("missing Columns (0028,0011)".into()))?;
    if rows == 0 || cols == 0 {
        return Err(IngestError::MalformedHeader(format!(
            "empty image geometry {rows}x{cols}"
        )));
    }
    let instance_number = f.instance_number.ok_or_else(|| {
        IngestError::MalformedHeader("missing Instance Number (0020,0013)".into())
    })?;
    let slope = f.slope.unwrap_or(1.0);
    if slope == 0.0 {
        return Err(IngestError::MalformedHeader("rescale slope is zero".into()));
    }
    let data = f.pixel_data.ok_or(IngestError::MissingPixelData)?;
    let (rows, cols) = (usize::from(rows), usize::from(cols));
    let expected = rows * cols * 2;
    if data.len() != expected {
        return Err(IngestError::PixelCountMismatch {
            expected,
            actual: data.len(),
        });
    }
    let pixels = data
        .chunks_exact(2)
        .map(|p| representation.decode(p[0], p[1]))
        .collect();
    Ok(DicomSlice {
        raw_pixels: Grid::from_vec(rows, cols, pixels).expect("length checked above"),
        pixel_representation: representation,
        rescale_slope: slope,
        rescale_intercept: f.intercept.unwrap_or(0.0),
        slice_thickness: f.slice_thickness,
        instance_number,
        patient_id: f.patient_id.unwrap_or_default(),
    })
}
