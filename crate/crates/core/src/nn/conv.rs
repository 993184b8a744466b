use rayon::prelude::*;

use super::{NnError, Tensor};

fn dims4(x: &Tensor, what: &str) -> Result<[usize; 4], NnError> {
    x.expect_rank(4, what)?;
    let s = x.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

fn check_bias(bias: Option<&Tensor>, c_out: usize) -> Result<(), NnError> {
    if let Some(b) = bias {
        b.expect_shape(&[c_out], "conv bias")?;
    }
    Ok(())
}

/// 3D cross-correlation.
///
/// `x` is `[C_in, D, H, W]`, `weight` is `[C_out, C_in, k, k, k]`. Each output
/// element starts from its bias and accumulates kernel taps in `(kz, ky, kx,
/// c_in)` order. Work is split across output channels only.
pub fn conv3d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, NnError> {
    let [c_in, d, h, w] = dims4(x, "conv3d input")?;
    weight.expect_rank(5, "conv3d weight")?;
    let ws = weight.shape();
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != c_in || ws[3] != k || ws[4] != k {
        return Err(NnError::Shape(format!(
            "conv3d weight {ws:?} incompatible with {c_in} input channels"
        )));
    }
    check_bias(bias, c_out)?;
    if stride == 0 {
        return Err(NnError::Shape("conv3d stride must be positive".into()));
    }
    let mut out_dims = [0usize; 3];
    for (o, n) in out_dims.iter_mut().zip([d, h, w]) {
        let span = n + 2 * pad;
        if span < k || (span - k) % stride != 0 {
            return Err(NnError::Shape(format!(
                "conv3d: extent {n} with pad {pad}, kernel {k}, stride {stride} does not divide"
            )));
        }
        *o = (span - k) / stride + 1;
    }
    let [od, oh, ow] = out_dims;
    let plane = od * oh * ow;
    let xs = x.data();
    let wd = weight.data();

    // Valid output range along an axis for kernel tap `kk`:
    // input index o*stride + kk - pad must lie in [0, n).
    let valid = |kk: usize, n: usize, on: usize| -> (usize, usize) {
        let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
        let hi_excl = if n + pad > kk {
            ((n + pad - kk - 1) / stride + 1).min(on)
        } else {
            0
        };
        (lo, hi_excl.max(lo))
    };

    let mut out = vec![0.0; c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(co, o)| {
        o.fill(bias.map_or(0.0, |b| b.data()[co]));
        for kz in 0..k {
            let (z0, z1) = valid(kz, d, od);
            for ky in 0..k {
                let (y0, y1) = valid(ky, h, oh);
                for kx in 0..k {
                    let (x0, x1) = valid(kx, w, ow);
                    for ci in 0..c_in {
                        let wv = wd[(((co * c_in + ci) * k + kz) * k + ky) * k + kx];
                        let xc = &xs[ci * d * h * w..(ci + 1) * d * h * w];
                        for oz in z0..z1 {
                            let iz = oz * stride + kz - pad;
                            for oy in y0..y1 {
                                let iy = oy * stride + ky - pad;
                                let xrow = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                let orow = &mut o[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                if stride == 1 {
                                    let off = x0 + kx - pad;
                                    for (ov, xv) in orow[x0..x1].iter_mut().zip(&xrow[off..]) {
                                        *ov += wv * xv;
                                    }
                                } else {
                                    for ox in x0..x1 {
                                        orow[ox] += wv * xrow[ox * stride + kx - pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![c_out, od, oh, ow], out)
}

/// 3D transposed convolution (the adjoint of a strided conv without padding).
///
/// `weight` is `[C_in, C_out, k, k, k]`; output extent per axis is
/// `(n - 1) * stride + k`. For each output channel, contributions are
/// scattered in `(c_in, z, y, x, kz, ky, kx)` order.
pub fn conv_transpose3d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor, NnError> {
    let [c_in, d, h, w] = dims4(x, "conv_transpose3d input")?;
    weight.expect_rank(5, "conv_transpose3d weight")?;
    let ws = weight.shape();
    let (c_out, k) = (ws[1], ws[2]);
    if ws[0] != c_in || ws[3] != k || ws[4] != k {
        return Err(NnError::Shape(format!(
            "conv_transpose3d weight {ws:?} incompatible with {c_in} input channels"
        )));
    }
    check_bias(bias, c_out)?;
    if stride == 0 {
        return Err(NnError::Shape("conv_transpose3d stride must be positive".into()));
    }
    let (od, oh, ow) = ((d - 1) * stride + k, (h - 1) * stride + k, (w - 1) * stride + k);
    let plane = od * oh * ow;
    let xs = x.data();
    let wd = weight.data();
    let k3 = k * k * k;

    let mut out = vec![0.0; c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(co, o)| {
        o.fill(bias.map_or(0.0, |b| b.data()[co]));
        for ci in 0..c_in {
            let wk = &wd[(ci * c_out + co) * k3..(ci * c_out + co + 1) * k3];
            let xc = &xs[ci * d * h * w..(ci + 1) * d * h * w];
            for iz in 0..d {
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = xc[(iz * h + iy) * w + ix];
                        for kz in 0..k {
                            for ky in 0..k {
                                let base = ((iz * stride + kz) * oh + iy * stride + ky) * ow + ix * stride;
                                let wrow = &wk[(kz * k + ky) * k..(kz * k + ky + 1) * k];
                                for (ov, wv) in o[base..base + k].iter_mut().zip(wrow) {
                                    *ov += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![c_out, od, oh, ow], out)
}

/// Source taps `(i0, i1, t)` for ×2 linear upsampling with half-pixel
/// centers (`align_corners = false`); output `o` samples position
/// `max((o + 0.5) / 2 - 0.5, 0)` and is `(1 - t) * in[i0] + t * in[i1]`.
pub fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Trilinear ×2 upsampling of a `[C, D, H, W]` tensor.
pub fn trilinear_upsample(x: &Tensor) -> Result<Tensor, NnError> {
    let [c, d, h, w] = dims4(x, "trilinear_upsample input")?;
    let (tz, ty, tx) = (upsample_taps(d), upsample_taps(h), upsample_taps(w));
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let plane = od * oh * ow;
    let xs = x.data();
    let mut out = vec![0.0; c * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(ci, o)| {
        let xc = &xs[ci * d * h * w..(ci + 1) * d * h * w];
        let at = |z: usize, y: usize, xx: usize| xc[(z * h + y) * w + xx];
        for (oz, &(z0, z1, fz)) in tz.iter().enumerate() {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let c00 = at(z0, y0, x0) * (1.0 - fx) + at(z0, y0, x1) * fx;
                    let c01 = at(z0, y1, x0) * (1.0 - fx) + at(z0, y1, x1) * fx;
                    let c10 = at(z1, y0, x0) * (1.0 - fx) + at(z1, y0, x1) * fx;
                    let c11 = at(z1, y1, x0) * (1.0 - fx) + at(z1, y1, x1) * fx;
                    let c0 = c00 * (1.0 - fy) + c01 * fy;
                    let c1 = c10 * (1.0 - fy) + c11 * fy;
                    o[(oz * oh + oy) * ow + ox] = c0 * (1.0 - fz) + c1 * fz;
                }
            }
        }
    });
    Tensor::new(vec![c, od, oh, ow], out)
}
