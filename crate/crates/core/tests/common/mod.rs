//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use lesiondet::geometry::Box3;
use lesiondet::rng::DetRng;

pub fn rng(seed: u64) -> DetRng {
    DetRng::new(seed)
}

pub fn int_in(r: &mut DetRng, lo: i64, hi_inclusive: i64) -> i64 {
    lo + r.below((hi_inclusive - lo + 1) as u64) as i64
}

/// Random box with integer corners inside `[0, span)` per axis.
pub fn int_box(r: &mut DetRng, span: i64) -> Box3 {
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        let lo = int_in(r, 0, span - 2);
        let hi = int_in(r, lo + 1, span - 1);
        min[a] = lo as f64;
        max[a] = hi as f64;
    }
    Box3::new(min, max).unwrap()
}

/// Random box with real corners inside `[0, span)` per axis.
pub fn real_box(r: &mut DetRng, span: f64, max_extent: f64) -> Box3 {
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        let e = r.range(0.5, max_extent);
        min[a] = r.range(0.0, span - e);
        max[a] = min[a] + e;
    }
    Box3::new(min, max).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

use lesiondet::model::{EncoderKind, ModelConfig};
use lesiondet::nn::Tensor;

/// Reduced-width network for fast end-to-end tests on 32^3 inputs.
pub fn small_config(encoder: EncoderKind, in_channels: usize) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.encoder = encoder;
    cfg.in_channels = in_channels;
    cfg.swin.embed_dim = 12;
    cfg.swin.depths = vec![2, 2, 2, 2];
    cfg.swin.heads = vec![1, 2, 2, 4];
    cfg.conv.base_channels = 4;
    cfg.fpn.fpn_channels = 8;
    cfg.ssl.hidden = 8;
    cfg
}

pub fn random_tensor(r: &mut DetRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.normal()).collect()).unwrap()
}
