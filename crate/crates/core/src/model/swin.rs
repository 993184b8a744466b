//! Shifted-window transformer encoder.
//!
//! Tokens are `[D, H, W, C]` tensors (channels last). Encoder features are
//! returned channels first, `[C, D, H, W]`, ready for the convolutional
//! pyramid.
//!
//! Windowing follows the common 3D convention: along an axis whose token
//! extent does not exceed the window, the window shrinks to the extent and
//! that axis is never shifted; otherwise the grid is zero-padded (after
//! `norm1`) up to a multiple of the window. The shifted variant rolls the
//! padded grid by `-window/2` and masks attention between tokens that come
//! from different pre-roll regions. Padding tokens are not masked.

use rayon::prelude::*;

use super::params::{LayerNormParams, LinearParams, ParamSource};
use super::{ModelError, SwinConfig};
use crate::nn::{conv3d, dot, gelu, layer_norm, layer_norm_row, linear_row, softmax_in_place, Tensor, LAYER_NORM_EPS};

/// `[C, D, H, W]` to `[D, H, W, C]`.
pub fn to_tokens(x: &Tensor) -> Result<Tensor, ModelError> {
    x.expect_rank(4, "channels-first tensor")?;
    let s = x.shape();
    let (c, n) = (s[0], s[1] * s[2] * s[3]);
    let xs = x.data();
    let mut out = vec![0.0; c * n];
    out.par_chunks_mut(c).enumerate().for_each(|(i, t)| {
        for (ch, v) in t.iter_mut().enumerate() {
            *v = xs[ch * n + i];
        }
    });
    Ok(Tensor::new(vec![s[1], s[2], s[3], c], out)?)
}

/// `[D, H, W, C]` to `[C, D, H, W]`.
pub fn from_tokens(t: &Tensor) -> Result<Tensor, ModelError> {
    t.expect_rank(4, "token grid")?;
    let s = t.shape();
    let (c, n) = (s[3], s[0] * s[1] * s[2]);
    let ts = t.data();
    let mut out = vec![0.0; c * n];
    out.par_chunks_mut(n).enumerate().for_each(|(ch, plane)| {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = ts[i * c + ch];
        }
    });
    Ok(Tensor::new(vec![c, s[0], s[1], s[2]], out)?)
}

fn token_dims(t: &Tensor) -> Result<([usize; 3], usize), ModelError> {
    t.expect_rank(4, "token grid")?;
    let s = t.shape();
    Ok(([s[0], s[1], s[2]], s[3]))
}

/// How a token grid is cut into windows for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub dims: [usize; 3],
    pub window: [usize; 3],
    pub shift: [usize; 3],
    pub padded: [usize; 3],
}

impl WindowLayout {
    pub fn new(dims: [usize; 3], window: usize, shifted: bool) -> Self {
        let mut win = [0; 3];
        let mut shift = [0; 3];
        let mut padded = [0; 3];
        for a in 0..3 {
            if dims[a] <= window {
                win[a] = dims[a];
            } else {
                win[a] = window;
                if shifted {
                    shift[a] = window / 2;
                }
            }
            padded[a] = dims[a].div_ceil(win[a]) * win[a];
        }
        Self {
            dims,
            window: win,
            shift,
            padded,
        }
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }

    pub fn windows_per_axis(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.padded[a] / self.window[a])
    }

    pub fn num_windows(&self) -> usize {
        self.windows_per_axis().iter().product()
    }

    pub fn is_shifted(&self) -> bool {
        self.shift.iter().any(|&s| s > 0)
    }

    /// Rolled-frame coordinate of window `w`, intra-window index `i`.
    fn rolled_coord(&self, w: usize, i: usize) -> [usize; 3] {
        let nw = self.windows_per_axis();
        let wc = [w / (nw[1] * nw[2]), (w / nw[2]) % nw[1], w % nw[2]];
        let win = self.window;
        let ic = [i / (win[1] * win[2]), (i / win[2]) % win[1], i % win[2]];
        [0, 1, 2].map(|a| wc[a] * win[a] + ic[a])
    }

    /// Region label (0..27) of every token in every window, in the rolled
    /// frame; attention is only allowed between equal labels.
    pub fn region_labels(&self) -> Vec<u32> {
        let n = self.tokens_per_window();
        let mut labels = Vec::with_capacity(self.num_windows() * n);
        for w in 0..self.num_windows() {
            for i in 0..n {
                let p = self.rolled_coord(w, i);
                let mut l = 0;
                for a in 0..3 {
                    let part = if self.shift[a] == 0 || p[a] < self.padded[a] - self.window[a] {
                        0
                    } else if p[a] < self.padded[a] - self.shift[a] {
                        1
                    } else {
                        2
                    };
                    l = l * 3 + part;
                }
                labels.push(l);
            }
        }
        labels
    }
}

/// Cut (after rolling and zero padding) a token grid into `[nW, N, C]`.
pub fn gather_windows(tokens: &Tensor, layout: &WindowLayout) -> Result<Tensor, ModelError> {
    let (dims, c) = token_dims(tokens)?;
    if dims != layout.dims {
        return Err(ModelError::Config(format!("layout for {:?} used on {dims:?}", layout.dims)));
    }
    let n = layout.tokens_per_window();
    let nw = layout.num_windows();
    let ts = tokens.data();
    let mut out = vec![0.0; nw * n * c];
    out.par_chunks_mut(n * c).enumerate().for_each(|(w, win)| {
        for (i, dst) in win.chunks_exact_mut(c).enumerate() {
            let p = layout.rolled_coord(w, i);
            let o = [0, 1, 2].map(|a| (p[a] + layout.shift[a]) % layout.padded[a]);
            if (0..3).all(|a| o[a] < dims[a]) {
                let src = ((o[0] * dims[1] + o[1]) * dims[2] + o[2]) * c;
                dst.copy_from_slice(&ts[src..src + c]);
            }
        }
    });
    Ok(Tensor::new(vec![nw, n, c], out)?)
}

/// Inverse of [`gather_windows`]: un-roll and crop back to the token grid.
pub fn scatter_windows(windows: &Tensor, layout: &WindowLayout) -> Result<Tensor, ModelError> {
    windows.expect_rank(3, "windows")?;
    let (nw, n, c) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
    if nw != layout.num_windows() || n != layout.tokens_per_window() {
        return Err(ModelError::Config(format!(
            "{nw} windows of {n} tokens do not match layout {layout:?}"
        )));
    }
    let dims = layout.dims;
    let nwa = layout.windows_per_axis();
    let win = layout.window;
    let ws = windows.data();
    let mut out = vec![0.0; dims.iter().product::<usize>() * c];
    out.par_chunks_mut(c).enumerate().for_each(|(t, dst)| {
        let o = [t / (dims[1] * dims[2]), (t / dims[2]) % dims[1], t % dims[2]];
        let p = [0, 1, 2].map(|a| (o[a] + layout.padded[a] - layout.shift[a]) % layout.padded[a]);
        let w = ((p[0] / win[0]) * nwa[1] + p[1] / win[1]) * nwa[2] + p[2] / win[2];
        let i = ((p[0] % win[0]) * win[1] + p[1] % win[1]) * win[2] + p[2] % win[2];
        let src = (w * n + i) * c;
        dst.copy_from_slice(&ws[src..src + c]);
    });
    Ok(Tensor::new(vec![dims[0], dims[1], dims[2], c], out)?)
}

/// Non-overlapping windows of a grid whose extents are multiples of
/// `window`: `[nW, N, C]`, windows and intra-window tokens both in raster
/// order.
pub fn window_partition(tokens: &Tensor, window: usize) -> Result<Tensor, ModelError> {
    let layout = exact_layout(tokens, window)?;
    gather_windows(tokens, &layout)
}

pub fn window_reverse(windows: &Tensor, dims: [usize; 3], window: usize) -> Result<Tensor, ModelError> {
    check_divisible(dims, window)?;
    let layout = WindowLayout {
        dims,
        window: [window; 3],
        shift: [0; 3],
        padded: dims,
    };
    scatter_windows(windows, &layout)
}

fn check_divisible(dims: [usize; 3], window: usize) -> Result<(), ModelError> {
    if window == 0 || dims.iter().any(|&d| d % window != 0) {
        return Err(ModelError::Config(format!("token grid {dims:?} not divisible by window {window}")));
    }
    Ok(())
}

fn exact_layout(tokens: &Tensor, window: usize) -> Result<WindowLayout, ModelError> {
    let (dims, _) = token_dims(tokens)?;
    check_divisible(dims, window)?;
    Ok(WindowLayout {
        dims,
        window: [window; 3],
        shift: [0; 3],
        padded: dims,
    })
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// `[3C, C]`; output features are ordered `(q|k|v, head, head_dim)`.
    pub qkv: LinearParams,
    pub proj: LinearParams,
    /// `[(2W-1)^3, heads]`, indexed by the displacement between two tokens.
    pub rel_pos_bias: Tensor,
    pub heads: usize,
    /// Configured window edge `W` that sizes the bias table.
    pub window: usize,
}

impl AttentionParams {
    pub fn load(
        src: &mut dyn ParamSource,
        prefix: &str,
        dim: usize,
        heads: usize,
        window: usize,
    ) -> Result<Self, ModelError> {
        let t = 2 * window - 1;
        Ok(Self {
            qkv: LinearParams::load(src, &format!("{prefix}.qkv"), 3 * dim, dim, true)?,
            proj: LinearParams::load(src, &format!("{prefix}.proj"), dim, dim, true)?,
            rel_pos_bias: src.tensor(&format!("{prefix}.rel_pos_bias"), &[t * t * t, heads])?,
            heads,
            window,
        })
    }

    fn dim(&self) -> usize {
        self.proj.weight.shape()[0]
    }
}

/// Bias-table row for every (query, key) pair of a `window`-shaped block.
pub fn relative_position_index(window: [usize; 3], table_window: usize) -> Vec<usize> {
    let n: usize = window.iter().product();
    let t = 2 * table_window - 1;
    let coord = |i: usize| [i / (window[1] * window[2]), (i / window[2]) % window[1], i % window[2]];
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let ci = coord(i);
        for j in 0..n {
            let cj = coord(j);
            let d = [0, 1, 2].map(|a| ci[a] + table_window - 1 - cj[a]);
            idx.push((d[0] * t + d[1]) * t + d[2]);
        }
    }
    idx
}

/// Attention over one window `x` (`N x C`). Writes the projected output to
/// `out` and, if given, the post-softmax weights `[heads, N, N]` to `probs`.
fn attend(
    x: &[f64],
    p: &AttentionParams,
    rel_index: &[usize],
    labels: Option<&[u32]>,
    out: &mut [f64],
    mut probs: Option<&mut [f64]>,
) -> Result<(), ModelError> {
    let c = p.dim();
    let n = x.len() / c;
    let hd = c / p.heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut qkv = vec![0.0; n * 3 * c];
    for (xr, o) in x.chunks_exact(c).zip(qkv.chunks_exact_mut(3 * c)) {
        linear_row(xr, p.qkv.weight.data(), p.qkv.bias_slice(), o);
    }
    let table = p.rel_pos_bias.data();
    let mut heads_out = vec![0.0; n * c];
    let mut row = vec![0.0; n];
    for h in 0..p.heads {
        for i in 0..n {
            let q = &qkv[i * 3 * c + h * hd..i * 3 * c + (h + 1) * hd];
            for (j, r) in row.iter_mut().enumerate() {
                *r = if labels.is_some_and(|l| l[i] != l[j]) {
                    f64::NEG_INFINITY
                } else {
                    let k = &qkv[j * 3 * c + c + h * hd..j * 3 * c + c + (h + 1) * hd];
                    scale * dot(q, k) + table[rel_index[i * n + j] * p.heads + h]
                };
            }
            softmax_in_place(&mut row)?;
            let o = &mut heads_out[i * c + h * hd..i * c + (h + 1) * hd];
            for (j, &pj) in row.iter().enumerate() {
                let v = &qkv[j * 3 * c + 2 * c + h * hd..j * 3 * c + 2 * c + (h + 1) * hd];
                for (oe, ve) in o.iter_mut().zip(v) {
                    *oe += pj * ve;
                }
            }
            if let Some(pr) = probs.as_deref_mut() {
                pr[(h * n + i) * n..(h * n + i + 1) * n].copy_from_slice(&row);
            }
        }
    }
    for (hr, o) in heads_out.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        linear_row(hr, p.proj.weight.data(), p.proj.bias_slice(), o);
    }
    Ok(())
}

fn check_attention_input(windows: &Tensor, p: &AttentionParams, window: [usize; 3], labels: Option<&[u32]>) -> Result<(), ModelError> {
    windows.expect_rank(3, "windows")?;
    let (nw, n, c) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
    if c != p.dim() || c % p.heads != 0 {
        return Err(ModelError::Config(format!("token dim {c} vs attention dim {} / {} heads", p.dim(), p.heads)));
    }
    if n != window.iter().product::<usize>() || window.iter().any(|&w| w > p.window) {
        return Err(ModelError::Config(format!(
            "window {window:?} incompatible with {n} tokens or table window {}",
            p.window
        )));
    }
    if labels.is_some_and(|l| l.len() != nw * n) {
        return Err(ModelError::Config("mask labels do not cover every token".into()));
    }
    Ok(())
}

/// Multi-head self-attention inside each window of `[nW, N, C]`, where
/// `window` is the block shape of the N tokens. With `labels` (one per token,
/// as from [`WindowLayout::region_labels`]), pairs with different labels get
/// `-inf` logits.
pub fn window_attention(
    windows: &Tensor,
    p: &AttentionParams,
    window: [usize; 3],
    labels: Option<&[u32]>,
) -> Result<Tensor, ModelError> {
    check_attention_input(windows, p, window, labels)?;
    let n = windows.shape()[1];
    let c = windows.shape()[2];
    let rel_index = relative_position_index(window, p.window);
    let mut out = vec![0.0; windows.len()];
    out.par_chunks_mut(n * c)
        .zip(windows.data().par_chunks(n * c))
        .enumerate()
        .try_for_each(|(w, (o, x))| attend(x, p, &rel_index, labels.map(|l| &l[w * n..(w + 1) * n]), o, None))?;
    Ok(Tensor::new(windows.shape().to_vec(), out)?)
}

/// Post-softmax attention weights `[nW, heads, N, N]` of [`window_attention`].
pub fn attention_weights(
    windows: &Tensor,
    p: &AttentionParams,
    window: [usize; 3],
    labels: Option<&[u32]>,
) -> Result<Tensor, ModelError> {
    check_attention_input(windows, p, window, labels)?;
    let (nw, n, c) = (windows.shape()[0], windows.shape()[1], windows.shape()[2]);
    let rel_index = relative_position_index(window, p.window);
    let mut probs = vec![0.0; nw * p.heads * n * n];
    let mut scratch = vec![0.0; n * c];
    for (w, (x, pr)) in windows.data().chunks_exact(n * c).zip(probs.chunks_exact_mut(p.heads * n * n)).enumerate() {
        attend(x, p, &rel_index, labels.map(|l| &l[w * n..(w + 1) * n]), &mut scratch, Some(pr))?;
    }
    Ok(Tensor::new(vec![nw, p.heads, n, n], probs)?)
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub norm1: LayerNormParams,
    pub attn: AttentionParams,
    pub norm2: LayerNormParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

impl BlockParams {
    pub fn load(
        src: &mut dyn ParamSource,
        prefix: &str,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            norm1: LayerNormParams::load(src, &format!("{prefix}.norm1"), dim)?,
            attn: AttentionParams::load(src, &format!("{prefix}.attn"), dim, heads, window)?,
            norm2: LayerNormParams::load(src, &format!("{prefix}.norm2"), dim)?,
            fc1: LinearParams::load(src, &format!("{prefix}.mlp.fc1"), mlp_ratio * dim, dim, true)?,
            fc2: LinearParams::load(src, &format!("{prefix}.mlp.fc2"), dim, mlp_ratio * dim, true)?,
        })
    }
}

/// Residual attention sub-block only: `x + attn(norm1(x))` with the given
/// window layout.
pub fn attention_residual(tokens: &Tensor, p: &BlockParams, shifted: bool) -> Result<Tensor, ModelError> {
    let (dims, _) = token_dims(tokens)?;
    let layout = WindowLayout::new(dims, p.attn.window, shifted);
    let h = layer_norm(tokens, &p.norm1.gamma, &p.norm1.beta, LAYER_NORM_EPS)?;
    let windows = gather_windows(&h, &layout)?;
    let labels = layout.is_shifted().then(|| layout.region_labels());
    let attended = window_attention(&windows, &p.attn, layout.window, labels.as_deref())?;
    let back = scatter_windows(&attended, &layout)?;
    Ok(tokens.add(&back)?)
}

/// One transformer block: windowed attention then MLP, both residual.
pub fn swin_block(tokens: &Tensor, p: &BlockParams, shifted: bool) -> Result<Tensor, ModelError> {
    let mut x = attention_residual(tokens, p, shifted)?;
    let c = x.last_dim();
    let hidden = p.fc1.weight.shape()[0];
    let (g, b) = (p.norm2.gamma.data(), p.norm2.beta.data());
    x.data_mut().par_chunks_mut(c).for_each_init(
        || (vec![0.0; c], vec![0.0; hidden], vec![0.0; c]),
        |(n2, hbuf, o), t| {
            n2.copy_from_slice(t);
            layer_norm_row(n2, g, b, LAYER_NORM_EPS);
            linear_row(n2, p.fc1.weight.data(), p.fc1.bias_slice(), hbuf);
            for v in hbuf.iter_mut() {
                *v = gelu(*v);
            }
            linear_row(hbuf, p.fc2.weight.data(), p.fc2.bias_slice(), o);
            for (tv, ov) in t.iter_mut().zip(o.iter()) {
                *tv += ov;
            }
        },
    );
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct MergeParams {
    pub norm: LayerNormParams,
    /// `[2C, 8C]`, no bias.
    pub reduction: LinearParams,
}

impl MergeParams {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, dim: usize) -> Result<Self, ModelError> {
        Ok(Self {
            norm: LayerNormParams::load(src, &format!("{prefix}.norm"), 8 * dim)?,
            reduction: LinearParams::load(src, &format!("{prefix}.reduction"), 2 * dim, 8 * dim, false)?,
        })
    }
}

/// 2x downsampling: concatenate the 8 children of each output token in
/// `(dz, dy, dx)` raster order, layer-normalize and project 8C to 2C.
pub fn patch_merging(tokens: &Tensor, p: &MergeParams) -> Result<Tensor, ModelError> {
    let (dims, c) = token_dims(tokens)?;
    if dims.iter().any(|&d| d % 2 != 0) {
        return Err(ModelError::Config(format!("patch merging needs even token dims, got {dims:?}")));
    }
    let od = dims.map(|d| d / 2);
    let out_c = p.reduction.weight.shape()[0];
    if p.reduction.weight.shape()[1] != 8 * c {
        return Err(ModelError::Config(format!(
            "merge reduction {:?} does not take 8 x {c} features",
            p.reduction.weight.shape()
        )));
    }
    let ts = tokens.data();
    let mut out = vec![0.0; od.iter().product::<usize>() * out_c];
    out.par_chunks_mut(out_c).enumerate().for_each_init(
        || vec![0.0; 8 * c],
        |cat, (t, o)| {
            let (z, y, x) = (t / (od[1] * od[2]), (t / od[2]) % od[1], t % od[2]);
            for child in 0..8 {
                let (dz, dy, dx) = (child >> 2, (child >> 1) & 1, child & 1);
                let src = (((2 * z + dz) * dims[1] + 2 * y + dy) * dims[2] + 2 * x + dx) * c;
                cat[child * c..(child + 1) * c].copy_from_slice(&ts[src..src + c]);
            }
            layer_norm_row(cat, p.norm.gamma.data(), p.norm.beta.data(), LAYER_NORM_EPS);
            linear_row(cat, p.reduction.weight.data(), None, o);
        },
    );
    Ok(Tensor::new(vec![od[0], od[1], od[2], out_c], out)?)
}

#[derive(Debug, Clone)]
pub struct PatchEmbedParams {
    /// `[C, C_in, p, p, p]`
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
    pub norm: LayerNormParams,
}

/// Strided convolution with kernel = stride = `patch`, then layer norm.
/// Returns tokens `[D/p, H/p, W/p, C]`.
pub fn patch_embed(x: &Tensor, p: &PatchEmbedParams, patch: usize) -> Result<Tensor, ModelError> {
    x.expect_rank(4, "patch embed input")?;
    if x.shape()[1..].iter().any(|&d| d % patch != 0) {
        return Err(ModelError::Config(format!(
            "input {:?} not divisible by patch size {patch}",
            &x.shape()[1..]
        )));
    }
    let y = conv3d(x, &p.proj_weight, Some(&p.proj_bias), patch, 0)?;
    let t = to_tokens(&y)?;
    Ok(layer_norm(&t, &p.norm.gamma, &p.norm.beta, LAYER_NORM_EPS)?)
}

#[derive(Debug, Clone)]
pub struct StageParams {
    pub blocks: Vec<BlockParams>,
    pub merge: MergeParams,
}

#[derive(Debug, Clone)]
pub struct SwinEncoder {
    pub cfg: SwinConfig,
    pub embed: PatchEmbedParams,
    pub stages: Vec<StageParams>,
}

impl SwinEncoder {
    pub fn load(src: &mut dyn ParamSource, cfg: &SwinConfig, in_channels: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (c, p) = (cfg.embed_dim, cfg.patch_size);
        let embed = PatchEmbedParams {
            proj_weight: src.tensor("swin.patch_embed.proj.weight", &[c, in_channels, p, p, p])?,
            proj_bias: src.tensor("swin.patch_embed.proj.bias", &[c])?,
            norm: LayerNormParams::load(src, "swin.patch_embed.norm", c)?,
        };
        let mut stages = Vec::with_capacity(cfg.num_stages());
        for s in 0..cfg.num_stages() {
            let dim = cfg.stage_dim(s);
            let blocks = (0..cfg.depths[s])
                .map(|b| {
                    BlockParams::load(
                        src,
                        &format!("swin.stage{s}.block{b}"),
                        dim,
                        cfg.heads[s],
                        cfg.window,
                        cfg.mlp_ratio,
                    )
                })
                .collect::<Result<_, _>>()?;
            let merge = MergeParams::load(src, &format!("swin.stage{s}.merge"), dim)?;
            stages.push(StageParams { blocks, merge });
        }
        Ok(Self {
            cfg: cfg.clone(),
            embed,
            stages,
        })
    }

    /// Features at strides `p, 2p, ..., p * 2^stages`, channels first.
    /// Blocks alternate unshifted and shifted windows; every stage output
    /// is taken after its merge.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        let mut t = patch_embed(x, &self.embed, self.cfg.patch_size)?;
        let mut feats = vec![from_tokens(&t)?];
        for stage in &self.stages {
            for (b, block) in stage.blocks.iter().enumerate() {
                t = swin_block(&t, block, b % 2 == 1)?;
            }
            t = patch_merging(&t, &stage.merge)?;
            feats.push(from_tokens(&t)?);
        }
        Ok(feats)
    }
}
