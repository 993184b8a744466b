//! Box algebra, anchors, target assignment and detection post-processing.
//!
//! Boxes are half-open `[min, max)` in continuous voxel coordinates with axes
//! ordered `(z, y, x)`; a voxel `(z, y, x)` occupies `[z, z+1) x [y, y+1) x [x, x+1)`.
//! Volumes are plain products of extents. All ties are broken by lowest index.

mod anchors;
mod assign;
mod boxes;
mod detection;

pub use anchors::{anchor_templates, generate_anchors, AnchorGrid, AnchorLevel};
pub use assign::{assign_targets, AnchorLabel, Assignment};
pub use boxes::{decode, encode, giou, iou, Box3, BoxDelta};
pub use detection::{
    filter_detections, nms, read_detections, score_order, write_detections, Detection,
};

/// Defaults for matching and suppression thresholds.
pub const DEFAULT_POS_IOU: f64 = 0.5;
pub const DEFAULT_NEG_IOU: f64 = 0.4;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Label carried by lesion detections (single foreground class).
pub const LESION_LABEL: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("box has non-positive extent: min {min:?}, max {max:?}")]
    EmptyBox { min: [f64; 3], max: [f64; 3] },
    #[error("non-finite coordinate or delta")]
    NonFinite,
    #[error("anchor template list is empty")]
    NoTemplates,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed detection JSON: {0}")]
    Json(#[from] serde_json::Error),
}
