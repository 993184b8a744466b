use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{iou, Box3, GeometryError};

/// A scored box belonging to one case.
///
/// Serialized as `{"case_id": str, "box": [z0,y0,x0,z1,y1,x1], "score": f, "label": i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub case_id: String,
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub score: f64,
    pub label: u32,
}

impl Detection {
    pub fn new(case_id: impl Into<String>, bbox: Box3, score: f64, label: u32) -> Self {
        Self {
            case_id: case_id.into(),
            bbox,
            score,
            label,
        }
    }
}

/// Indices sorted by descending score, lower index first among equal scores.
pub fn score_order(scores: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.into_iter().collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy class-agnostic non-maximum suppression.
///
/// A detection is kept iff its IoU with every previously kept detection is
/// below `iou_threshold`. Output is in kept (descending score) order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<&Detection> = Vec::new();
    for i in score_order(detections.iter().map(|d| d.score)) {
        let d = &detections[i];
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Order-preserving removal of low-score and small detections.
pub fn filter_detections(detections: &[Detection], min_score: f64, min_volume: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.score >= min_score && d.bbox.volume() >= min_volume)
        .cloned()
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, GeometryError> {
    let text = std::fs::read_to_string(path)?;
    let dets: Vec<Detection> = serde_json::from_str(&text)?;
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(GeometryError::InvalidParameter(format!(
            "non-finite score in case {}",
            d.case_id
        )));
    }
    Ok(dets)
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<(), GeometryError> {
    let text = serde_json::to_string_pretty(detections)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
