use rayon::prelude::*;

use super::{NnError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dot product with four fixed interleaved accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y = x W^T + b` over the last axis; `weight` is `[out, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NnError> {
    weight.expect_rank(2, "linear weight")?;
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if x.last_dim() != in_dim {
        return Err(NnError::Shape(format!(
            "linear: input last dim {} != weight in-dim {in_dim}",
            x.last_dim()
        )));
    }
    if let Some(b) = bias {
        b.expect_shape(&[out_dim], "linear bias")?;
    }
    let rows = x.len() / in_dim;
    let mut out = vec![0.0; rows * out_dim];
    let (w, b) = (weight.data(), bias.map(Tensor::data));
    out.par_chunks_mut(out_dim)
        .zip(x.data().par_chunks(in_dim))
        .for_each(|(o, xr)| linear_row(xr, w, b, o));
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    Tensor::new(shape, out)
}

/// Normalize each vector along the last axis to zero mean and unit variance
/// (biased estimator), then scale and shift.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor, NnError> {
    let d = x.last_dim();
    gamma.expect_shape(&[d], "layer norm gamma")?;
    beta.expect_shape(&[d], "layer norm beta")?;
    let (g, b) = (gamma.data(), beta.data());
    let mut out = x.clone();
    out.data_mut().par_chunks_mut(d).for_each(|v| layer_norm_row(v, g, b, eps));
    Ok(out)
}

/// One row of [`linear`]: `out[j] = dot(x, w[j]) + b[j]`, with `w` row-major
/// `[out.len(), x.len()]`.
#[inline]
pub fn linear_row(x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let n = x.len();
    for (j, oj) in out.iter_mut().enumerate() {
        let mut v = dot(x, &w[j * n..(j + 1) * n]);
        if let Some(b) = bias {
            v += b[j];
        }
        *oj = v;
    }
}

/// One row of [`layer_norm`], in place.
#[inline]
pub fn layer_norm_row(v: &mut [f64], gamma: &[f64], beta: &[f64], eps: f64) {
    let d = v.len() as f64;
    let mean = v.iter().sum::<f64>() / d;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    for (i, a) in v.iter_mut().enumerate() {
        *a = (*a - mean) * inv * gamma[i] + beta[i];
    }
}

/// Exact GELU, `x * Phi(x)` with the error function.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place max-shifted softmax. Entries equal to `-inf` receive weight 0.
pub fn softmax_in_place(v: &mut [f64]) -> Result<(), NnError> {
    if v.is_empty() {
        return Err(NnError::Shape("softmax over an empty axis".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnError::Shape("softmax over an all -inf vector".into()));
    }
    let mut sum = 0.0;
    for a in v.iter_mut() {
        *a = (*a - max).exp();
        sum += *a;
    }
    for a in v.iter_mut() {
        *a /= sum;
    }
    Ok(())
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor, NnError> {
    let mut out = x.clone();
    let d = x.last_dim();
    for row in out.data_mut().chunks_mut(d) {
        softmax_in_place(row)?;
    }
    Ok(out)
}
