use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Axis-aligned half-open box `[min, max)` in continuous voxel coordinates,
/// axes ordered `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct Box3 {
    min: [f64; 3],
    max: [f64; 3],
}

impl Box3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, GeometryError> {
        for axis in 0..3 {
            if !min[axis].is_finite() || !max[axis].is_finite() {
                return Err(GeometryError::NonFinite);
            }
            if max[axis] <= min[axis] {
                return Err(GeometryError::EmptyBox { min, max });
            }
        }
        Ok(Self { min, max })
    }

    /// Box of the given center and extent.
    pub fn from_center_extent(center: [f64; 3], extent: [f64; 3]) -> Result<Self, GeometryError> {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = center[a] - 0.5 * extent[a];
            max[a] = center[a] + 0.5 * extent[a];
        }
        Self::new(min, max)
    }

    pub fn min(&self) -> [f64; 3] {
        self.min
    }

    pub fn max(&self) -> [f64; 3] {
        self.max
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    /// Volume of the overlap with `other`, zero when disjoint or touching.
    pub fn intersection_volume(&self, other: &Box3) -> f64 {
        let mut v = 1.0;
        for a in 0..3 {
            let lo = self.min[a].max(other.min[a]);
            let hi = self.max[a].min(other.max[a]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &Box3) -> Box3 {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = self.min[a].min(other.min[a]);
            max[a] = self.max[a].max(other.max[a]);
        }
        Box3 { min, max }
    }

    /// Clip to `[0, shape)`; `None` when nothing of positive extent remains.
    pub fn clip_to(&self, shape: [usize; 3]) -> Option<Box3> {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = self.min[a].max(0.0);
            max[a] = self.max[a].min(shape[a] as f64);
        }
        Box3::new(min, max).ok()
    }

    /// `[z0, y0, x0, z1, y1, x1]`, the interchange ordering.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.min[0], self.min[1], self.min[2], self.max[0], self.max[1], self.max[2],
        ]
    }
}

impl TryFrom<[f64; 6]> for Box3 {
    type Error = GeometryError;

    fn try_from(v: [f64; 6]) -> Result<Self, Self::Error> {
        Box3::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

impl From<Box3> for [f64; 6] {
    fn from(b: Box3) -> Self {
        b.to_array()
    }
}

pub fn iou(a: &Box3, b: &Box3) -> f64 {
    let inter = a.intersection_volume(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `IoU - |hull \ union| / |hull|`, in `(-1, 1]`.
pub fn giou(a: &Box3, b: &Box3) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    let hull = a.hull(b).volume();
    inter / union - (hull - union) / hull
}

/// Regression target of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDelta {
    /// Center displacement in units of the anchor extent.
    pub center_offset: [f64; 3],
    /// `ln(target_extent / anchor_extent)` per axis.
    pub log_shape_ratio: [f64; 3],
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        center_offset: [0.0; 3],
        log_shape_ratio: [0.0; 3],
    };

    /// Deltas in head-output order `(dz, dy, dx, sz, sy, sx)`.
    pub fn from_slice(v: &[f64]) -> Self {
        BoxDelta {
            center_offset: [v[0], v[1], v[2]],
            log_shape_ratio: [v[3], v[4], v[5]],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let c = self.center_offset;
        let s = self.log_shape_ratio;
        [c[0], c[1], c[2], s[0], s[1], s[2]]
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub fn encode(anchor: &Box3, target: &Box3) -> BoxDelta {
    let (ac, ae) = (anchor.center(), anchor.extent());
    let (tc, te) = (target.center(), target.extent());
    let mut d = BoxDelta::ZERO;
    for a in 0..3 {
        d.center_offset[a] = (tc[a] - ac[a]) / ae[a];
        d.log_shape_ratio[a] = (te[a] / ae[a]).ln();
    }
    d
}

pub fn decode(anchor: &Box3, delta: &BoxDelta) -> Result<Box3, GeometryError> {
    if !delta.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let (ac, ae) = (anchor.center(), anchor.extent());
    let mut center = [0.0; 3];
    let mut extent = [0.0; 3];
    for a in 0..3 {
        center[a] = ac[a] + delta.center_offset[a] * ae[a];
        extent[a] = ae[a] * delta.log_shape_ratio[a].exp();
    }
    Box3::from_center_extent(center, extent)
}
