use super::{LossError, LossValueGrad};
use crate::geometry::Box3;

/// Predicted box as `(center, ln extent)`; every finite parameter vector is a
/// valid box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxParams {
    pub center: [f64; 3],
    pub log_extent: [f64; 3],
}

impl BoxParams {
    pub fn from_box(b: &Box3) -> Self {
        Self {
            center: b.center(),
            log_extent: b.extent().map(f64::ln),
        }
    }

    /// `[cz, cy, cx, lz, ly, lx]`
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            center: [v[0], v[1], v[2]],
            log_extent: [v[3], v[4], v[5]],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (c, l) = (self.center, self.log_extent);
        [c[0], c[1], c[2], l[0], l[1], l[2]]
    }
}

fn product_except(v: &[f64; 3], skip: usize) -> f64 {
    (0..3).filter(|&b| b != skip).map(|b| v[b]).product()
}

/// `1 - GIoU(pred, target)` with the gradient w.r.t. the six `pred`
/// parameters in `[cz, cy, cx, lz, ly, lx]` order.
///
/// The loss is piecewise smooth. Where a predicted face coincides with a
/// target face, the one-sided derivative for moving that face inward (into
/// the overlap) is used. When the boxes do not overlap the intersection term
/// contributes no gradient.
pub fn giou_loss(pred: &BoxParams, target: &Box3) -> Result<LossValueGrad, LossError> {
    if pred.to_array().iter().any(|v| !v.is_finite()) {
        return Err(LossError::InvalidConfig("non-finite box parameters".into()));
    }
    let extent = pred.log_extent.map(f64::exp);
    let mut pmin = [0.0; 3];
    let mut pmax = [0.0; 3];
    for a in 0..3 {
        pmin[a] = pred.center[a] - 0.5 * extent[a];
        pmax[a] = pred.center[a] + 0.5 * extent[a];
    }
    let (tmin, tmax) = (target.min(), target.max());

    let mut overlap = [0.0; 3];
    let mut hull = [0.0; 3];
    for a in 0..3 {
        overlap[a] = pmax[a].min(tmax[a]) - pmin[a].max(tmin[a]);
        hull[a] = pmax[a].max(tmax[a]) - pmin[a].min(tmin[a]);
    }
    let overlapping = overlap.iter().all(|&o| o > 0.0);
    let inter = if overlapping { overlap.iter().product() } else { 0.0 };
    let vp: f64 = extent.iter().product();
    let union = vp + target.volume() - inter;
    let h: f64 = hull.iter().product();
    let value = 2.0 - inter / union - union / h;

    // Partial derivatives w.r.t. the face coordinates, then chain rule to
    // center and log-extent.
    let mut gradient = vec![0.0; 6];
    for a in 0..3 {
        let side_p = product_except(&extent, a);
        let side_h = product_except(&hull, a);
        let side_i = if overlapping { product_except(&overlap, a) } else { 0.0 };

        // (d/dmax, d/dmin) for each quantity
        let di = (
            if pmax[a] <= tmax[a] { side_i } else { 0.0 },
            if pmin[a] >= tmin[a] { -side_i } else { 0.0 },
        );
        let dvp = (side_p, -side_p);
        let dh = (
            if pmax[a] > tmax[a] { side_h } else { 0.0 },
            if pmin[a] < tmin[a] { -side_h } else { 0.0 },
        );
        let dl = |di: f64, dvp: f64, dh: f64| {
            let du = dvp - di;
            -(di / union - inter * du / (union * union)) - (du / h - union * dh / (h * h))
        };
        let d_max = dl(di.0, dvp.0, dh.0);
        let d_min = dl(di.1, dvp.1, dh.1);
        gradient[a] = d_max + d_min;
        gradient[3 + a] = (d_max - d_min) * 0.5 * extent[a];
    }
    Ok(LossValueGrad { value, gradient })
}
