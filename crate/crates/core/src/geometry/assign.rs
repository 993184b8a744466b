use super::{iou, Box3, GeometryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box at this index.
    Positive(usize),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<AnchorLabel>,
}

impl Assignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match l {
            AnchorLabel::Positive(g) => Some((i, *g)),
            _ => None,
        })
    }

    pub fn num_negative(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == AnchorLabel::Negative)
            .count()
    }
}

/// Threshold matching plus force-matching.
///
/// An anchor is positive when its best IoU is `>= pos_iou` (matched to the
/// lowest-index GT among ties), negative below `neg_iou`, ignored otherwise.
/// Then each GT, in order, claims its highest-IoU anchor (lowest index among
/// ties) that no earlier GT has already claimed, even if that IoU is zero.
/// Every GT therefore owns at least one positive whenever there are at least
/// as many anchors as GT boxes.
pub fn assign_targets(
    anchors: &[Box3],
    gt: &[Box3],
    pos_iou: f64,
    neg_iou: f64,
) -> Result<Assignment, GeometryError> {
    if !(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "need 0 <= neg_iou ({neg_iou}) <= pos_iou ({pos_iou}) <= 1"
        )));
    }
    if gt.is_empty() {
        return Ok(Assignment {
            labels: vec![AnchorLabel::Negative; anchors.len()],
        });
    }

    // ious[g][a]
    let ious: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| anchors.iter().map(|a| iou(a, g)).collect())
        .collect();

    let mut labels = Vec::with_capacity(anchors.len());
    for a in 0..anchors.len() {
        let (mut best_g, mut best) = (0, f64::NEG_INFINITY);
        for (g, row) in ious.iter().enumerate() {
            if row[a] > best {
                best = row[a];
                best_g = g;
            }
        }
        labels.push(if best >= pos_iou {
            AnchorLabel::Positive(best_g)
        } else if best < neg_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        });
    }

    let mut claimed = vec![false; anchors.len()];
    for (g, row) in ious.iter().enumerate() {
        let mut pick: Option<usize> = None;
        for (a, &v) in row.iter().enumerate() {
            if claimed[a] {
                continue;
            }
            if pick.is_none_or(|p| v > row[p]) {
                pick = Some(a);
            }
        }
        if let Some(a) = pick {
            claimed[a] = true;
            labels[a] = AnchorLabel::Positive(g);
        }
    }
    Ok(Assignment { labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(at: f64, size: f64) -> Box3 {
        Box3::new([at; 3], [at + size; 3]).unwrap()
    }

    #[test]
    fn no_gt_all_negative() {
        let anchors = vec![cube(0.0, 1.0), cube(1.0, 1.0)];
        let a = assign_targets(&anchors, &[], 0.5, 0.4).unwrap();
        assert!(a.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    #[test]
    fn identical_gt_forced_positive_at_any_threshold() {
        let anchors = vec![cube(0.0, 1.0), cube(2.0, 1.0), cube(4.0, 1.0)];
        let a = assign_targets(&anchors, &[cube(2.0, 1.0)], 1.0, 1.0).unwrap();
        assert_eq!(a.labels[1], AnchorLabel::Positive(0));
        assert_eq!(a.labels[0], AnchorLabel::Negative);
    }

    #[test]
    fn low_quality_gt_still_gets_an_anchor() {
        let anchors = vec![cube(0.0, 4.0), cube(10.0, 4.0)];
        let gt = [cube(11.0, 0.5)];
        let a = assign_targets(&anchors, &gt, 0.5, 0.4).unwrap();
        assert_eq!(a.labels[1], AnchorLabel::Positive(0));
        assert_eq!(a.labels[0], AnchorLabel::Negative);
    }

    #[test]
    fn shared_best_anchor_goes_to_first_gt_then_next_best() {
        let anchors = vec![cube(0.0, 2.0), cube(0.5, 2.0)];
        let gt = [cube(0.0, 2.0), cube(0.1, 2.0)];
        let a = assign_targets(&anchors, &gt, 0.99, 0.1).unwrap();
        assert_eq!(a.labels[0], AnchorLabel::Positive(0));
        assert_eq!(a.labels[1], AnchorLabel::Positive(1));
    }

    #[test]
    fn bad_thresholds() {
        assert!(assign_targets(&[], &[], 0.3, 0.4).is_err());
        assert!(assign_targets(&[], &[], 1.3, 0.4).is_err());
    }
}
