//! Volumes, label masks, file I/O and instance extraction.
//!
//! Grids are stored z-major: the flat index of `(z, y, x)` is
//! `(z * ny + y) * nx + x`. World coordinates map voxel index `i` on each axis
//! to `origin + i * spacing`; rotation matrices are ignored.

mod components;
mod nifti;
mod raw;

pub use components::{connected_components, Instance, InstanceSet};
pub use nifti::load_nifti;
pub use raw::{load_raw, save_raw_mask, save_raw_volume, RawDtype, RawHeader};

use std::collections::HashSet;

/// Highest anatomy label in the 104-structure convention.
pub const MAX_ANATOMY_LABEL: u32 = 104;

pub const PET_CHANNEL: &str = "pet";
pub const CT_CHANNEL: &str = "ct";
pub const ANATOMY_CHANNEL: &str = "anatomy";

#[derive(Debug, thiserror::Error)]
pub enum VolumeError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("channel '{name}' has {got} values, expected {expected}")]
    ChannelSize {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("duplicate channel name '{0}'")]
    DuplicateChannel(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("expected a single-channel volume, got {0} channels")]
    ChannelCount(usize),
    #[error("anatomy label {0} exceeds {MAX_ANATOMY_LABEL}")]
    LabelOutOfRange(u32),
    #[error("negative label {0}")]
    NegativeLabel(i64),
    #[error("not a NIfTI-1 single file: {0}")]
    BadMagic(String),
    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),
    #[error("expected 3 dimensions, header declares {0}")]
    DimCount(i64),
    #[error("truncated payload: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Shape, spacing and origin of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if shape.contains(&0) {
            return Err(VolumeError::Geometry(format!("shape {shape:?} has a zero axis")));
        }
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(VolumeError::Geometry(format!("spacing {spacing:?} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::Geometry(format!("origin {origin:?} must be finite")));
        }
        Ok(Self {
            shape,
            spacing,
            origin,
        })
    }

    /// Unit spacing, zero origin.
    pub fn unit(shape: [usize; 3]) -> Result<Self, VolumeError> {
        Self::new(shape, [1.0; 3], [0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub data: Vec<f64>,
}

/// Multi-channel scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: GridGeometry,
    channels: Vec<Channel>,
}

impl Volume {
    pub fn new(geometry: GridGeometry, channels: Vec<Channel>) -> Result<Self, VolumeError> {
        let n = geometry.len();
        let mut names = HashSet::new();
        for c in &channels {
            if c.data.len() != n {
                return Err(VolumeError::ChannelSize {
                    name: c.name.clone(),
                    got: c.data.len(),
                    expected: n,
                });
            }
            if !names.insert(c.name.as_str()) {
                return Err(VolumeError::DuplicateChannel(c.name.clone()));
            }
        }
        Ok(Self { geometry, channels })
    }

    pub fn single(geometry: GridGeometry, name: &str, data: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(
            geometry,
            vec![Channel {
                name: name.to_string(),
                data,
            }],
        )
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn value(&self, channel: usize, z: usize, y: usize, x: usize) -> f64 {
        self.channels[channel].data[self.geometry.index(z, y, x)]
    }

    pub fn with_name(mut self, channel: usize, name: &str) -> Result<Self, VolumeError> {
        self.channels[channel].name = name.to_string();
        Self::new(self.geometry, self.channels)
    }

    /// Channel-major copy of all values.
    pub fn to_flat(&self) -> Vec<f64> {
        self.channels.iter().flat_map(|c| c.data.iter().copied()).collect()
    }
}

/// Non-negative integer label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    geometry: GridGeometry,
    labels: Vec<u32>,
}

impl LabelMask {
    pub fn new(geometry: GridGeometry, labels: Vec<u32>) -> Result<Self, VolumeError> {
        if labels.len() != geometry.len() {
            return Err(VolumeError::ChannelSize {
                name: "labels".into(),
                got: labels.len(),
                expected: geometry.len(),
            });
        }
        Ok(Self { geometry, labels })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u32 {
        self.labels[self.geometry.index(z, y, x)]
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Result of loading a grid file.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Volume(Volume),
    Mask(LabelMask),
}

/// What a loader should produce from the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Volume,
    /// Integer payloads only.
    Mask,
}

impl Grid {
    pub fn into_volume(self) -> Option<Volume> {
        match self {
            Grid::Volume(v) => Some(v),
            Grid::Mask(_) => None,
        }
    }

    pub fn into_mask(self) -> Option<LabelMask> {
        match self {
            Grid::Mask(m) => Some(m),
            Grid::Volume(_) => None,
        }
    }
}

fn single_channel(v: &Volume) -> Result<&Channel, VolumeError> {
    match v.channels() {
        [c] => Ok(c),
        other => Err(VolumeError::ChannelCount(other.len())),
    }
}

/// Stack PET, CT and (optionally) the anatomy mask into one volume.
///
/// Anatomy labels are encoded as `label / 104`, background 0. The output keeps
/// the PET grid geometry.
pub fn fuse_channels(pet: &Volume, ct: &Volume, anatomy: Option<&LabelMask>) -> Result<Volume, VolumeError> {
    if pet.shape() != ct.shape() {
        return Err(VolumeError::ShapeMismatch(pet.shape(), ct.shape()));
    }
    let mut channels = vec![
        Channel {
            name: PET_CHANNEL.into(),
            data: single_channel(pet)?.data.clone(),
        },
        Channel {
            name: CT_CHANNEL.into(),
            data: single_channel(ct)?.data.clone(),
        },
    ];
    if let Some(mask) = anatomy {
        if mask.shape() != pet.shape() {
            return Err(VolumeError::ShapeMismatch(pet.shape(), mask.shape()));
        }
        let max = mask.max_label();
        if max > MAX_ANATOMY_LABEL {
            return Err(VolumeError::LabelOutOfRange(max));
        }
        channels.push(Channel {
            name: ANATOMY_CHANNEL.into(),
            data: mask
                .labels()
                .iter()
                .map(|&l| l as f64 / MAX_ANATOMY_LABEL as f64)
                .collect(),
        });
    }
    Volume::new(*pet.geometry(), channels)
}

/// Nearest-neighbour resampling in world coordinates. A target voxel exactly
/// halfway between two source centers takes the lower index; one whose world
/// position falls outside the source grid becomes background.
pub fn resample_nearest(mask: &LabelMask, target: &GridGeometry) -> LabelMask {
    let src = mask.geometry();
    let lookup: Vec<Vec<Option<usize>>> = (0..3)
        .map(|a| {
            (0..target.shape[a])
                .map(|i| {
                    let world = target.origin[a] + i as f64 * target.spacing[a];
                    let pos = ((world - src.origin[a]) / src.spacing[a] - 0.5).ceil();
                    (pos >= 0.0 && pos < src.shape[a] as f64).then_some(pos as usize)
                })
                .collect()
        })
        .collect();
    let mut labels = Vec::with_capacity(target.len());
    for z in &lookup[0] {
        for y in &lookup[1] {
            for x in &lookup[2] {
                labels.push(match (z, y, x) {
                    (Some(z), Some(y), Some(x)) => mask.get(*z, *y, *x),
                    _ => 0,
                });
            }
        }
    }
    LabelMask {
        geometry: *target,
        labels,
    }
}
