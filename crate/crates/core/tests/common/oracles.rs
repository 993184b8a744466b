//! Independent reference implementations shared by the module tests and the
//! acceptance run.

use std::collections::HashSet;

use lesiondet::eval::EvalCase;
use lesiondet::geometry::{iou, Box3, Detection};
use lesiondet::losses::{BoxParams, LossValueGrad};
use lesiondet::model::swin::MergeParams;
use lesiondet::model::{LayerNormParams, LinearParams};
use lesiondet::nn::{Tensor, LAYER_NORM_EPS};
use lesiondet::rng::DetRng;

use super::{int_in, random_tensor, real_box};

/// Voxel set of an integer-cornered box.
pub fn voxels(b: &Box3) -> Vec<[i64; 3]> {
    let (lo, hi) = (b.min().map(|v| v as i64), b.max().map(|v| v as i64));
    let mut out = Vec::new();
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for x in lo[2]..hi[2] {
                out.push([z, y, x]);
            }
        }
    }
    out
}

/// IoU and GIoU from voxel counting only.
pub fn enumerate_iou_giou(a: &Box3, b: &Box3) -> (f64, f64) {
    let va = voxels(a);
    let vb: HashSet<[i64; 3]> = voxels(b).into_iter().collect();
    let inter = va.iter().filter(|v| vb.contains(*v)).count() as f64;
    let union = va.len() as f64 + vb.len() as f64 - inter;
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for v in va.iter().chain(vb.iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k] + 1);
        }
    }
    let hull = ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as f64;
    (inter / union, inter / union - (hull - union) / hull)
}

/// Suppression-matrix formulation: walk the ranking, and each kept box
/// marks everything it overlaps as suppressed.
pub fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<usize> {
    let n = dets.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in 1..n {
        let mut j = i;
        while j > 0 {
            let (a, b) = (order[j - 1], order[j]);
            if dets[b].score > dets[a].score || (dets[b].score == dets[a].score && b < a) {
                order.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for j in 0..n {
            if iou(&dets[i].bbox, &dets[j].bbox) >= thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Max-norm relative error between the analytic and numerical gradients.
pub fn fd_error(x: &[f64], f: impl Fn(&[f64]) -> LossValueGrad) -> f64 {
    let analytic = f(x).gradient;
    assert_eq!(analytic.len(), x.len());
    let mut numeric = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let up = f(&xp).value;
        xp[i] = x[i] - h;
        let down = f(&xp).value;
        xp[i] = x[i];
        numeric[i] = (up - down) / (2.0 * h);
    }
    let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    let diff = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

/// Smallest gap between any predicted face and any target face on the same
/// axis; the loss is smooth when this is well above the step size.
pub fn face_gap(p: &BoxParams, t: &Box3) -> f64 {
    let mut gap = f64::INFINITY;
    for a in 0..3 {
        let e = p.log_extent[a].exp();
        let (lo, hi) = (p.center[a] - 0.5 * e, p.center[a] + 0.5 * e);
        for pf in [lo, hi] {
            for tf in [t.min()[a], t.max()[a]] {
                gap = gap.min((pf - tf).abs());
            }
        }
    }
    gap
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
    let (ci, d, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let o = |n: usize| (n + 2 * p - k) / s + 1;
    let (od, oh, ow) = (o(d), o(h), o(wd));
    let mut out = Tensor::zeros(&[co, od, oh, ow]);
    for c in 0..co {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[c];
                    for q in 0..ci {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iz = (z * s + kz) as i64 - p as i64;
                                    let iy = (y * s + ky) as i64 - p as i64;
                                    let ix = (xx * s + kx) as i64 - p as i64;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= d as i64 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    acc += w.at(&[c, q, kz, ky, kx]) * x.at(&[q, iz as usize, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[c, z, y, xx], acc);
                }
            }
        }
    }
    out
}

pub fn conv_transpose_oracle(x: &Tensor, w: &Tensor, b: &Tensor, s: usize) -> Tensor {
    let (ci, d, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[1], w.shape()[2]);
    let mut out = Tensor::zeros(&[co, (d - 1) * s + k, (h - 1) * s + k, (wd - 1) * s + k]);
    for c in 0..co {
        for z in 0..out.shape()[1] {
            for y in 0..out.shape()[2] {
                for xx in 0..out.shape()[3] {
                    out.set(&[c, z, y, xx], b.data()[c]);
                }
            }
        }
    }
    for q in 0..ci {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..wd {
                    for c in 0..co {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let idx = [c, z * s + kz, y * s + ky, xx * s + kx];
                                    let v = out.at(&idx) + x.at(&[q, z, y, xx]) * w.at(&[q, c, kz, ky, kx]);
                                    out.set(&idx, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Each output voxel as an explicit weighted sum over every input voxel,
/// with hat weights `max(0, 1 - |pos - i|)` at the clamped half-pixel
/// source position.
pub fn trilinear_oracle(x: &Tensor) -> Tensor {
    let (c, d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let pos = |o: usize, n: usize| ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let hat = |p: f64, i: usize| (1.0 - (p - i as f64).abs()).max(0.0);
    let mut out = Tensor::zeros(&[c, 2 * d, 2 * h, 2 * w]);
    for q in 0..c {
        for oz in 0..2 * d {
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    let (pz, py, px) = (pos(oz, d), pos(oy, h), pos(ox, w));
                    let mut acc = 0.0;
                    for z in 0..d {
                        for y in 0..h {
                            for xx in 0..w {
                                acc += hat(pz, z) * hat(py, y) * hat(px, xx) * x.at(&[q, z, y, xx]);
                            }
                        }
                    }
                    out.set(&[q, oz, oy, ox], acc);
                }
            }
        }
    }
    out
}

pub fn merge_params(r: &mut DetRng, c: usize) -> MergeParams {
    MergeParams {
        norm: LayerNormParams {
            gamma: random_tensor(r, &[8 * c]),
            beta: random_tensor(r, &[8 * c]),
        },
        reduction: LinearParams {
            weight: random_tensor(r, &[2 * c, 8 * c]),
            bias: None,
        },
    }
}

/// Concatenate the eight children of each 2x2x2 block (slot `dz*4+dy*2+dx`),
/// layer-normalize the 8C vector, project to 2C.
pub fn merging_oracle(t: &Tensor, p: &MergeParams) -> Tensor {
    let s = t.shape();
    let (d, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[d / 2, h / 2, w / 2, 2 * c]);
    for z in 0..d / 2 {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let mut v = Vec::with_capacity(8 * c);
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            for ch in 0..c {
                                v.push(t.at(&[2 * z + dz, 2 * y + dy, 2 * x + dx, ch]));
                            }
                        }
                    }
                }
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
                let normed: Vec<f64> = v
                    .iter()
                    .enumerate()
                    .map(|(i, a)| (a - mean) / (var + LAYER_NORM_EPS).sqrt() * p.norm.gamma.data()[i] + p.norm.beta.data()[i])
                    .collect();
                for o in 0..2 * c {
                    let acc: f64 = (0..8 * c).map(|i| p.reduction.weight.at(&[o, i]) * normed[i]).sum();
                    out.set(&[z, y, x, o], acc);
                }
            }
        }
    }
    out
}

pub fn jitter(r: &mut DetRng, b: &Box3, amount: f64) -> Box3 {
    let mut min = b.min();
    let mut max = b.max();
    for a in 0..3 {
        min[a] += r.range(-amount, amount);
        max[a] = (max[a] + r.range(-amount, amount)).max(min[a] + 0.25);
    }
    Box3::new(min, max).unwrap()
}

pub fn random_instance(r: &mut DetRng) -> Vec<EvalCase> {
    let n_cases = int_in(r, 1, 5);
    let mut cases = Vec::new();
    for c in 0..n_cases {
        let n_gt = int_in(r, 0, 4);
        let gts: Vec<Box3> = (0..n_gt).map(|_| real_box(r, 30.0, 8.0)).collect();
        let mut detections = Vec::new();
        for g in &gts {
            for _ in 0..int_in(r, 0, 2) {
                let b = if r.uniform() < 0.3 { *g } else { jitter(r, g, 2.5) };
                detections.push(Detection::new(&format!("c{c}"), b, (int_in(r, 1, 10) as f64) / 10.0, 1));
            }
        }
        for _ in 0..int_in(r, 0, 4) {
            detections.push(Detection::new(&format!("c{c}"), real_box(r, 30.0, 8.0), (int_in(r, 1, 10) as f64) / 10.0, 1));
        }
        cases.push(EvalCase {
            case_id: format!("c{c}"),
            detections,
            gts,
        });
    }
    if cases.iter().all(|c| c.gts.is_empty()) {
        cases[0].gts.push(real_box(r, 30.0, 8.0));
    }
    cases
}

/// Greedy matching restricted to detections scored at least `t`, recomputed
/// from scratch: (true positives, false positives).
pub fn counts_at(case: &EvalCase, thr: f64, t: f64) -> (usize, usize) {
    let mut idx: Vec<usize> = (0..case.detections.len()).filter(|&i| case.detections[i].score >= t).collect();
    idx.sort_by(|&a, &b| case.detections[b].score.partial_cmp(&case.detections[a].score).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; case.gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for i in idx {
        let mut best = None;
        let mut best_iou = 0.0;
        for (g, gt) in case.gts.iter().enumerate() {
            let v = iou(&case.detections[i].bbox, gt);
            if !taken[g] && v > 0.0 && v >= thr && v > best_iou {
                best = Some(g);
                best_iou = v;
            }
        }
        match best {
            Some(g) => {
                taken[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
    }
    (tp, fp)
}

/// (recall, precision, mean FP per case) at every distinct score threshold.
pub fn oracle_points(cases: &[EvalCase], thr: f64) -> Vec<(f64, f64, f64)> {
    let total_gt: usize = cases.iter().map(|c| c.gts.len()).sum();
    let mut scores: Vec<f64> = cases.iter().flat_map(|c| c.detections.iter().map(|d| d.score)).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();
    scores
        .iter()
        .map(|&t| {
            let (tp, fp) = cases.iter().map(|c| counts_at(c, thr, t)).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            (tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64, fp as f64 / cases.len() as f64)
        })
        .collect()
}

pub fn oracle_ap(points: &[(f64, f64, f64)]) -> f64 {
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

pub fn oracle_froc(points: &[(f64, f64, f64)], fppi: &[f64]) -> f64 {
    fppi.iter()
        .map(|&f| points.iter().filter(|p| p.2 <= f).map(|p| p.0).fold(0.0, f64::max))
        .sum::<f64>()
        / fppi.len() as f64
}
