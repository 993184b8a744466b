//! Detection scoring: greedy matching, average precision, FROC and mAP, and
//! the five-column summary table.
//!
//! Matching is per case and greedy by descending score (ties to the lower
//! index): each detection takes the unmatched ground-truth box with the
//! highest IoU (lowest index on ties), provided that IoU is positive and at
//! least the threshold. Because higher-scored detections are matched first,
//! whether a detection is a true positive does not depend on any score
//! cutoff below it, so PR and FROC curves are sweeps over a single matching.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, read_detections, score_order, Box3, Detection, GeometryError};
use crate::phantom::{DatasetManifest, PhantomError, MANIFEST_FILE};
use crate::volume::connected_components;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no ground-truth boxes in any case")]
    NoGroundTruth,
    #[error("no cases to evaluate")]
    NoCases,
    #[error("prediction case '{0}' is not in the ground truth")]
    UnknownCase(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case_id: String,
    /// `(detection index, ground-truth index, IoU)` in matching order.
    pub matches: Vec<(usize, usize, f64)>,
    /// Unmatched detection indices, in descending score order.
    pub false_positives: Vec<usize>,
    pub false_negatives: usize,
}

impl CaseResult {
    pub fn true_positives(&self) -> usize {
        self.matches.len()
    }
}

pub fn match_case(case_id: &str, dets: &[Detection], gts: &[Box3], iou_thr: f64) -> CaseResult {
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::new();
    let mut false_positives = Vec::new();
    for di in score_order(dets.iter().map(|d| d.score)) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(&dets[di].bbox, g);
            if v > 0.0 && v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) => {
                taken[gi] = true;
                matches.push((di, gi, v));
            }
            None => false_positives.push(di),
        }
    }
    CaseResult {
        case_id: case_id.to_string(),
        matches,
        false_positives,
        false_negatives: taken.iter().filter(|t| !**t).count(),
    }
}

/// Detections and ground truth of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub case_id: String,
    pub detections: Vec<Detection>,
    pub gts: Vec<Box3>,
}

/// One operating point: everything scored at least `score` is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub recall: f64,
    pub precision: f64,
    /// Mean false positives per case.
    pub fppi: f64,
}

/// Operating points at every distinct detection score, highest first.
pub fn sweep(cases: &[EvalCase], iou_thr: f64) -> Result<Vec<SweepPoint>, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let total_gt: usize = cases.iter().map(|c| c.gts.len()).sum();
    if total_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    // (score, is true positive)
    let mut pooled = Vec::new();
    for c in cases {
        let r = match_case(&c.case_id, &c.detections, &c.gts, iou_thr);
        pooled.extend(r.matches.iter().map(|&(d, _, _)| (c.detections[d].score, true)));
        pooled.extend(r.false_positives.iter().map(|&d| (c.detections[d].score, false)));
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(score, is_tp)) in pooled.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        if pooled.get(i + 1).is_none_or(|n| n.0 != score) {
            points.push(SweepPoint {
                score,
                true_positives: tp,
                false_positives: fp,
                recall: tp as f64 / total_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
                fppi: fp as f64 / cases.len() as f64,
            });
        }
    }
    Ok(points)
}

/// Area under the precision envelope (all-point interpolation).
pub fn ap_from_sweep(points: &[SweepPoint]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, p) in points.iter().enumerate() {
        let envelope = points[k..].iter().map(|q| q.precision).fold(0.0, f64::max);
        ap += (p.recall - prev_recall) * envelope;
        prev_recall = p.recall;
    }
    ap
}

/// Mean over `fppi_points` of the highest sensitivity reachable while the
/// mean false positives per case stay at or below the point.
pub fn froc_from_sweep(points: &[SweepPoint], fppi_points: &[f64]) -> f64 {
    if fppi_points.is_empty() {
        return 0.0;
    }
    let total: f64 = fppi_points
        .iter()
        .map(|&f| {
            points
                .iter()
                .filter(|p| p.fppi <= f)
                .map(|p| p.recall)
                .fold(0.0, f64::max)
        })
        .sum();
    total / fppi_points.len() as f64
}

pub fn average_precision(cases: &[EvalCase], iou_thr: f64) -> Result<f64, EvalError> {
    Ok(ap_from_sweep(&sweep(cases, iou_thr)?))
}

pub const DEFAULT_FPPI_POINTS: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

pub fn froc(cases: &[EvalCase], iou_thr: f64, fppi_points: &[f64]) -> Result<f64, EvalError> {
    Ok(froc_from_sweep(&sweep(cases, iou_thr)?, fppi_points))
}

/// Inclusive threshold grid `lo, lo + step, ..., hi`.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, EvalError> {
    if !(step > 0.0) || !(lo <= hi) {
        return Err(EvalError::Config(format!("grid {lo}..{hi} step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

pub fn map_range(cases: &[EvalCase], lo: f64, hi: f64, step: f64) -> Result<f64, EvalError> {
    let grid = threshold_grid(lo, hi, step)?;
    let mut sum = 0.0;
    for &t in &grid {
        sum += average_precision(cases, t)?;
    }
    Ok(sum / grid.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// IoU thresholds of the FROC and AP columns.
    pub headline_iou: [f64; 2],
    pub map_lo: f64,
    pub map_hi: f64,
    pub map_step: f64,
    pub fppi_points: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            headline_iou: [0.1, 0.5],
            map_lo: 0.1,
            map_hi: 0.5,
            map_step: 0.05,
            fppi_points: DEFAULT_FPPI_POINTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub iou: f64,
    pub ap: f64,
    pub froc: f64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub headline_iou: [f64; 2],
    pub map_range: [f64; 2],
    pub froc_at_01: f64,
    pub froc_at_05: f64,
    pub ap_at_01: f64,
    pub ap_at_05: f64,
    pub map_01_05: f64,
    /// Per IoU threshold, the two headline thresholds first, then the mAP
    /// grid.
    pub curves: Vec<ThresholdCurve>,
}

fn curve(cases: &[EvalCase], iou_thr: f64, cfg: &EvalConfig) -> Result<ThresholdCurve, EvalError> {
    let points = sweep(cases, iou_thr)?;
    Ok(ThresholdCurve {
        iou: iou_thr,
        ap: ap_from_sweep(&points),
        froc: froc_from_sweep(&points, &cfg.fppi_points),
        points,
    })
}

pub fn evaluate_cases(cases: &[EvalCase], cfg: &EvalConfig, experiment: &str) -> Result<MetricsReport, EvalError> {
    let [lo, hi] = cfg.headline_iou;
    let mut curves = vec![curve(cases, lo, cfg)?, curve(cases, hi, cfg)?];
    let grid = threshold_grid(cfg.map_lo, cfg.map_hi, cfg.map_step)?;
    let mut map = 0.0;
    for &t in &grid {
        let c = curve(cases, t, cfg)?;
        map += c.ap;
        curves.push(c);
    }
    Ok(MetricsReport {
        experiment: experiment.to_string(),
        headline_iou: cfg.headline_iou,
        map_range: [cfg.map_lo, cfg.map_hi],
        froc_at_01: curves[0].froc,
        froc_at_05: curves[1].froc,
        ap_at_01: curves[0].ap,
        ap_at_05: curves[1].ap,
        map_01_05: map / grid.len() as f64,
        curves,
    })
}

/// Ground-truth boxes per case id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub cases: BTreeMap<String, Vec<Box3>>,
}

impl GroundTruth {
    /// Detection JSON: every listed box is a ground-truth box; the case set
    /// is the set of case ids present.
    pub fn from_detections(dets: &[Detection]) -> Self {
        let mut cases: BTreeMap<String, Vec<Box3>> = BTreeMap::new();
        for d in dets {
            cases.entry(d.case_id.clone()).or_default().push(d.bbox);
        }
        Self { cases }
    }

    /// Generated dataset directory: every manifest case, with boxes from the
    /// connected components of its lesion mask.
    pub fn from_dataset(dir: &Path) -> Result<Self, EvalError> {
        let manifest = DatasetManifest::load(dir)?;
        let mut cases = BTreeMap::new();
        for c in &manifest.cases {
            let mask = c.load_lesions(dir)?;
            cases.insert(c.id.clone(), connected_components(&mask, |l| l > 0).boxes());
        }
        Ok(Self { cases })
    }

    /// A dataset directory (containing the manifest) or a detection JSON.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        if path.is_dir() && path.join(MANIFEST_FILE).is_file() {
            Self::from_dataset(path)
        } else {
            Ok(Self::from_detections(&read_detections(path)?))
        }
    }

    /// Pair predictions with the ground truth, in case-id order.
    pub fn cases_with(&self, preds: &[Detection]) -> Result<Vec<EvalCase>, EvalError> {
        let mut by_case: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
        for p in preds {
            if !self.cases.contains_key(&p.case_id) {
                return Err(EvalError::UnknownCase(p.case_id.clone()));
            }
            by_case.entry(&p.case_id).or_default().push(p.clone());
        }
        Ok(self
            .cases
            .iter()
            .map(|(id, gts)| EvalCase {
                case_id: id.clone(),
                detections: by_case.remove(id.as_str()).unwrap_or_default(),
                gts: gts.clone(),
            })
            .collect())
    }
}

pub fn build_report(
    preds: &[Detection],
    gt: &GroundTruth,
    cfg: &EvalConfig,
    experiment: &str,
) -> Result<MetricsReport, EvalError> {
    evaluate_cases(&gt.cases_with(preds)?, cfg, experiment)
}

fn fmt_thr(t: f64) -> String {
    format!("{t}")
}

fn header(headline: [f64; 2], map: [f64; 2]) -> String {
    let [a, b] = headline.map(fmt_thr);
    let [lo, hi] = map.map(fmt_thr);
    format!("| Experiment | FROC@{a} | FROC@{b} | AP@{a} | AP@{b} | mAP@{lo}\u{2013}{hi} |")
}

/// Markdown table with one row per report. All reports must share the same
/// thresholds.
pub fn markdown_table(reports: &[MetricsReport]) -> Result<String, EvalError> {
    let first = reports.first().ok_or(EvalError::NoCases)?;
    if reports
        .iter()
        .any(|r| r.headline_iou != first.headline_iou || r.map_range != first.map_range)
    {
        return Err(EvalError::Config("reports use different IoU thresholds".into()));
    }
    let mut out = header(first.headline_iou, first.map_range);
    out.push_str("\n|---|---|---|---|---|---|\n");
    for r in reports {
        out.push_str(&format!(
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            r.experiment, r.froc_at_01, r.froc_at_05, r.ap_at_01, r.ap_at_05, r.map_01_05
        ));
    }
    Ok(out)
}
