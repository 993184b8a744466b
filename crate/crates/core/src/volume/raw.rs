//! Flat binary payload plus JSON header.
//!
//! ```json
//! {"shape": [z, y, x], "spacing": [sz, sy, sx], "dtype": "f32", "data": "pet.raw"}
//! ```
//!
//! The payload is little-endian, z-major (x fastest). Two optional keys extend
//! the format: `"origin"` (defaults to zeros) and `"channels"`, a list of
//! channel names; multi-channel payloads are the channels concatenated in
//! that order. `"data"` is resolved relative to the header's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Channel, Grid, GridGeometry, GridKind, LabelMask, Volume, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    F32,
    U8,
    I16,
}

impl RawDtype {
    pub fn size(self) -> usize {
        match self {
            RawDtype::F32 => 4,
            RawDtype::U8 => 1,
            RawDtype::I16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: RawDtype,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
}

pub(crate) fn decode_payload(bytes: &[u8], dtype: RawDtype, little: bool) -> Vec<f64> {
    match dtype {
        RawDtype::U8 => bytes.iter().map(|&b| b as f64).collect(),
        RawDtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                if little {
                    i16::from_le_bytes(b) as f64
                } else {
                    i16::from_be_bytes(b) as f64
                }
            })
            .collect(),
        RawDtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if little {
                    f32::from_le_bytes(b) as f64
                } else {
                    f32::from_be_bytes(b) as f64
                }
            })
            .collect(),
    }
}

fn payload_path(header_path: &Path, data: &str) -> PathBuf {
    header_path
        .parent()
        .map(|p| p.join(data))
        .unwrap_or_else(|| PathBuf::from(data))
}

pub fn load_raw(header_path: &Path, kind: GridKind) -> Result<Grid, VolumeError> {
    let header: RawHeader = serde_json::from_str(&std::fs::read_to_string(header_path)?)?;
    let geometry = GridGeometry::new(header.shape, header.spacing, header.origin.unwrap_or([0.0; 3]))?;
    let names = header.channels.clone().unwrap_or_else(|| vec!["data".to_string()]);
    if names.is_empty() {
        return Err(VolumeError::Header("empty channel list".into()));
    }
    let bytes = std::fs::read(payload_path(header_path, &header.data))?;
    let n = geometry.len();
    let expected = n * names.len() * header.dtype.size();
    if bytes.len() != expected {
        return Err(VolumeError::Header(format!(
            "payload size mismatch: {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let values = decode_payload(&bytes, header.dtype, true);
    match kind {
        GridKind::Volume => {
            let channels = names
                .into_iter()
                .zip(values.chunks_exact(n))
                .map(|(name, data)| Channel {
                    name,
                    data: data.to_vec(),
                })
                .collect();
            Ok(Grid::Volume(Volume::new(geometry, channels)?))
        }
        GridKind::Mask => {
            if header.dtype == RawDtype::F32 {
                return Err(VolumeError::UnsupportedDatatype(
                    "f32 payload cannot load as a label mask".into(),
                ));
            }
            if names.len() != 1 {
                return Err(VolumeError::ChannelCount(names.len()));
            }
            let labels = values
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

fn data_file_name(header_path: &Path) -> Result<String, VolumeError> {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| VolumeError::Header(format!("bad header path {}", header_path.display())))?;
    Ok(format!("{stem}.raw"))
}

fn write_header(header_path: &Path, header: &RawHeader) -> Result<(), VolumeError> {
    let text = serde_json::to_string_pretty(header)?;
    std::fs::write(header_path, text + "\n")?;
    Ok(())
}

/// Write `volume` as f32 next to `header_path` (`<stem>.raw`).
pub fn save_raw_volume(volume: &Volume, header_path: &Path) -> Result<(), VolumeError> {
    let data = data_file_name(header_path)?;
    let g = volume.geometry();
    let mut bytes = Vec::with_capacity(g.len() * volume.num_channels() * 4);
    for c in volume.channels() {
        for &v in &c.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(payload_path(header_path, &data), bytes)?;
    write_header(
        header_path,
        &RawHeader {
            shape: g.shape,
            spacing: g.spacing,
            dtype: RawDtype::F32,
            data,
            origin: Some(g.origin),
            channels: Some(volume.channels().iter().map(|c| c.name.clone()).collect()),
        },
    )
}

/// Write `mask` as u8 when every label fits, else i16.
pub fn save_raw_mask(mask: &LabelMask, header_path: &Path) -> Result<(), VolumeError> {
    let data = data_file_name(header_path)?;
    let max = mask.max_label();
    let (dtype, bytes) = if max <= u8::MAX as u32 {
        (RawDtype::U8, mask.labels().iter().map(|&l| l as u8).collect::<Vec<_>>())
    } else if max <= i16::MAX as u32 {
        (
            RawDtype::I16,
            mask.labels()
                .iter()
                .flat_map(|&l| (l as i16).to_le_bytes())
                .collect(),
        )
    } else {
        return Err(VolumeError::UnsupportedDatatype(format!(
            "label {max} does not fit in i16"
        )));
    };
    std::fs::write(payload_path(header_path, &data), bytes)?;
    let g = mask.geometry();
    write_header(
        header_path,
        &RawHeader {
            shape: g.shape,
            spacing: g.spacing,
            dtype,
            data,
            origin: Some(g.origin),
            channels: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, header: &str, payload: &[u8]) -> PathBuf {
        std::fs::write(dir.join("v.raw"), payload).unwrap();
        let p = dir.join("v.json");
        std::fs::write(&p, header).unwrap();
        p
    }

    #[test]
    fn index_order() {
        let dir = tempfile::tempdir().unwrap();
        let payload: Vec<u8> = (0..8).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let p = write(
            dir.path(),
            r#"{"shape":[2,2,2],"spacing":[1,1,1],"dtype":"f32","data":"v.raw"}"#,
            &payload,
        );
        let v = load_raw(&p, GridKind::Volume).unwrap().into_volume().unwrap();
        assert_eq!(v.value(0, 1, 1, 1), 7.0);
        assert_eq!(v.value(0, 1, 0, 0), 4.0);
        assert_eq!(v.value(0, 0, 1, 0), 2.0);

        let payload: Vec<u8> = [1f32, 2.0, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = write(
            dir.path(),
            r#"{"shape":[1,1,3],"spacing":[1,1,1],"dtype":"f32","data":"v.raw"}"#,
            &payload,
        );
        let v = load_raw(&p, GridKind::Volume).unwrap().into_volume().unwrap();
        assert_eq!(v.value(0, 0, 0, 2), 3.0);
    }

    #[test]
    fn size_mismatch_and_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            r#"{"shape":[2,2,2],"spacing":[1,1,1],"dtype":"u8","data":"v.raw"}"#,
            &[0u8; 7],
        );
        assert!(matches!(load_raw(&p, GridKind::Mask), Err(VolumeError::Header(_))));
        let p = write(dir.path(), r#"{"shape":[2,2,2],"dtype":"u8","data":"v.raw"}"#, &[0u8; 8]);
        let err = load_raw(&p, GridKind::Mask).unwrap_err().to_string();
        assert!(err.contains("spacing"), "{err}");
    }

    #[test]
    fn i16_mask_and_negative_labels() {
        let dir = tempfile::tempdir().unwrap();
        let payload: Vec<u8> = [3i16, 300, 0, -1].iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = write(
            dir.path(),
            r#"{"shape":[1,2,2],"spacing":[1,1,1],"dtype":"i16","data":"v.raw"}"#,
            &payload,
        );
        assert!(matches!(
            load_raw(&p, GridKind::Mask),
            Err(VolumeError::NegativeLabel(-1))
        ));
        let v = load_raw(&p, GridKind::Volume).unwrap().into_volume().unwrap();
        assert_eq!(v.channels()[0].data, vec![3.0, 300.0, 0.0, -1.0]);
    }

    #[test]
    fn mask_round_trip_picks_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridGeometry::new([1, 1, 3], [2.0, 1.0, 0.5], [1.0, 2.0, 3.0]).unwrap();
        for labels in [vec![0, 104, 7], vec![0, 1000, 7]] {
            let m = LabelMask::new(g, labels).unwrap();
            let p = dir.path().join("m.json");
            save_raw_mask(&m, &p).unwrap();
            let back = load_raw(&p, GridKind::Mask).unwrap().into_mask().unwrap();
            assert_eq!(back, m);
        }
    }
}
