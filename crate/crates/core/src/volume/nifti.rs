//! Uncompressed single-file NIfTI-1 (`.nii`) reader.

use std::path::Path;

use super::raw::{decode_payload, RawDtype};
use super::{Grid, GridGeometry, GridKind, LabelMask, Volume, VolumeError};

const HEADER_SIZE: usize = 348;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl HeaderReader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        match self.endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
}

/// Read a 3D NIfTI-1 file with datatype uint8, int16 or float32.
///
/// Byte order is detected from `sizeof_hdr`. NIfTI stores x fastest, which is
/// exactly our z-major flat layout with `dim[1..=3] = (nx, ny, nz)`.
/// `scl_slope`/`scl_inter` are applied when loading as a volume and ignored
/// for masks.
pub fn load_nifti(path: &Path, kind: GridKind) -> Result<Grid, VolumeError> {
    let bytes = std::fs::read(path)?;
    parse_nifti(&bytes, kind)
}

pub(crate) fn parse_nifti(bytes: &[u8], kind: GridKind) -> Result<Grid, VolumeError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(VolumeError::BadMagic(
            "gzip-compressed .nii.gz is not supported; decompress first".into(),
        ));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::Truncated {
            needed: HEADER_SIZE,
            available: bytes.len(),
        });
    }
    let raw_size: [u8; 4] = bytes[0..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(raw_size) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(raw_size) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(VolumeError::BadMagic(format!(
            "sizeof_hdr is neither 348 nor byte-swapped 348 ({:?})",
            raw_size
        )));
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(VolumeError::BadMagic(format!(
            "magic {:?}, expected \"n+1\"",
            String::from_utf8_lossy(&bytes[344..347])
        )));
    }
    let h = HeaderReader { bytes, endian };

    let ndim = h.i16(40);
    if ndim != 3 {
        return Err(VolumeError::DimCount(ndim as i64));
    }
    let dims: Vec<i16> = (1..=3).map(|i| h.i16(40 + 2 * i)).collect();
    if dims.iter().any(|&d| d <= 0) {
        return Err(VolumeError::Header(format!("non-positive dimension in {dims:?}")));
    }
    let (nx, ny, nz) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);

    let dtype = match h.i16(70) {
        2 => RawDtype::U8,
        4 => RawDtype::I16,
        16 => RawDtype::F32,
        other => {
            return Err(VolumeError::UnsupportedDatatype(format!(
                "NIfTI datatype code {other}"
            )))
        }
    };

    let pixdim = [h.f32(76 + 4), h.f32(76 + 8), h.f32(76 + 12)];
    let spacing = [pixdim[2] as f64, pixdim[1] as f64, pixdim[0] as f64];
    let origin = [h.f32(276) as f64, h.f32(272) as f64, h.f32(268) as f64];
    let geometry = GridGeometry::new([nz, ny, nx], spacing, origin)?;

    let vox_offset = h.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(VolumeError::Header(format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let needed = start + geometry.len() * dtype.size();
    if bytes.len() < needed {
        return Err(VolumeError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let payload = &bytes[start..needed];
    let little = endian == Endian::Little;

    match kind {
        GridKind::Volume => {
            let mut data = decode_payload(payload, dtype, little);
            let (slope, inter) = (h.f32(112) as f64, h.f32(116) as f64);
            if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
                for v in &mut data {
                    *v = *v * slope + inter;
                }
            }
            Ok(Grid::Volume(Volume::single(geometry, "data", data)?))
        }
        GridKind::Mask => {
            if dtype == RawDtype::F32 {
                return Err(VolumeError::UnsupportedDatatype(
                    "float32 payload cannot load as a label mask".into(),
                ));
            }
            let labels = decode_payload(payload, dtype, little)
                .into_iter()
                .map(|v| {
                    if v < 0.0 {
                        Err(VolumeError::NegativeLabel(v as i64))
                    } else {
                        Ok(v as u32)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Grid::Mask(LabelMask::new(geometry, labels)?))
        }
    }
}
