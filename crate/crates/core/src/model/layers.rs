//! Convolutional parts: baseline encoder, feature pyramid, prediction heads
//! and the reconstruction head.

use super::params::{ConvParams, ParamSource};
use super::{ConvEncoderConfig, HeadConfig, ModelError, SslHeadConfig};
use crate::nn::{gelu, relu, trilinear_upsample, Tensor};

/// Plain convolutional encoder. Stage `i` halves the grid with a 2x2x2
/// stride-2 convolution, follows with a 3x3x3 convolution, and applies GELU
/// after each; it outputs `base_channels * 2^i` channels at stride `2^(i+1)`.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub stages: Vec<[ConvParams; 2]>,
}

impl ConvEncoder {
    pub fn load(src: &mut dyn ParamSource, cfg: &ConvEncoderConfig, in_channels: usize) -> Result<Self, ModelError> {
        let mut stages = Vec::with_capacity(cfg.stages);
        let mut c_in = in_channels;
        for i in 0..cfg.stages {
            let ch = cfg.base_channels << i;
            stages.push([
                ConvParams::load(src, &format!("conv.stage{i}.conv0"), ch, c_in, 2)?,
                ConvParams::load(src, &format!("conv.stage{i}.conv1"), ch, ch, 3)?,
            ]);
            c_in = ch;
        }
        Ok(Self { stages })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for [down, conv] in &self.stages {
            h = down.conv(&h, 2, 0)?.map(gelu);
            h = conv.conv(&h, 1, 1)?.map(gelu);
            feats.push(h.clone());
        }
        Ok(feats)
    }
}

/// Feature pyramid: 1x1 lateral convolutions on every input level, a
/// top-down path (trilinear x2 upsampling plus addition), and 3x3 output
/// convolutions on the `outputs` finest levels.
#[derive(Debug, Clone)]
pub struct Fpn {
    pub laterals: Vec<ConvParams>,
    pub outputs: Vec<ConvParams>,
}

impl Fpn {
    pub fn load(
        src: &mut dyn ParamSource,
        in_channels: &[usize],
        fpn_channels: usize,
        outputs: usize,
    ) -> Result<Self, ModelError> {
        if in_channels.is_empty() || outputs == 0 || outputs > in_channels.len() {
            return Err(ModelError::Config(format!(
                "pyramid with {outputs} outputs over {} inputs",
                in_channels.len()
            )));
        }
        let laterals = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvParams::load(src, &format!("fpn.lateral{i}"), fpn_channels, c, 1))
            .collect::<Result<_, _>>()?;
        let outputs = (0..outputs)
            .map(|i| ConvParams::load(src, &format!("fpn.out{i}"), fpn_channels, fpn_channels, 3))
            .collect::<Result<_, _>>()?;
        Ok(Self { laterals, outputs })
    }

    /// Pyramid levels, finest first. Each input level must be exactly twice
    /// the extent of the next.
    pub fn forward(&self, features: &[Tensor]) -> Result<Vec<Tensor>, ModelError> {
        if features.len() != self.laterals.len() {
            return Err(ModelError::Config(format!(
                "pyramid expects {} feature levels, got {}",
                self.laterals.len(),
                features.len()
            )));
        }
        let mut merged: Vec<Option<Tensor>> = vec![None; features.len()];
        let mut top: Option<Tensor> = None;
        for i in (0..features.len()).rev() {
            let lat = self.laterals[i].conv(&features[i], 1, 0)?;
            let m = match top {
                None => lat,
                Some(t) => {
                    let up = trilinear_upsample(&t)?;
                    if up.shape() != lat.shape() {
                        return Err(ModelError::Config(format!(
                            "level {i}: upsampled {:?} vs lateral {:?}",
                            up.shape(),
                            lat.shape()
                        )));
                    }
                    lat.add(&up)?
                }
            };
            top = Some(m.clone());
            if i < self.outputs.len() {
                merged[i] = Some(m);
            }
        }
        self.outputs
            .iter()
            .zip(merged)
            .map(|(o, m)| o.conv(&m.expect("set for every output level"), 1, 1))
            .collect()
    }
}

/// Detection and segmentation heads. The class and box towers (3x3
/// convolutions with ReLU) are shared across detection levels.
#[derive(Debug, Clone)]
pub struct Heads {
    pub cls_tower: Vec<ConvParams>,
    pub cls_out: ConvParams,
    pub box_tower: Vec<ConvParams>,
    pub box_out: ConvParams,
    pub seg: ConvParams,
    pub num_anchors: usize,
    pub num_classes: usize,
}

/// Raw network outputs.
///
/// Per detection level, `class_logits[l][(cell * A + a) * K + k]` and
/// `box_deltas[l][(cell * A + a) * 6 + j]`, with cells in `(z, y, x)` raster
/// order and `j` over `(dz, dy, dx, sz, sy, sx)`; this matches the anchor
/// order of `generate_anchors`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub class_logits: Vec<Vec<f64>>,
    pub box_deltas: Vec<Vec<f64>>,
    /// `[seg_classes, D0, H0, W0]` at the finest pyramid level.
    pub seg_logits: Tensor,
    pub reconstruction: Option<Tensor>,
}

fn tower(src: &mut dyn ParamSource, name: &str, depth: usize, ch: usize) -> Result<Vec<ConvParams>, ModelError> {
    (0..depth)
        .map(|i| ConvParams::load(src, &format!("head.{name}.tower{i}"), ch, ch, 3))
        .collect()
}

/// `[A * K, d, h, w]` to cell-major, then anchor, then channel.
fn cell_major(t: &Tensor, per_anchor: usize) -> Vec<f64> {
    let s = t.shape();
    let (ch, cells) = (s[0], s[1] * s[2] * s[3]);
    let d = t.data();
    let anchors = ch / per_anchor;
    let mut out = vec![0.0; ch * cells];
    for cell in 0..cells {
        for a in 0..anchors {
            for k in 0..per_anchor {
                out[(cell * anchors + a) * per_anchor + k] = d[(a * per_anchor + k) * cells + cell];
            }
        }
    }
    out
}

impl Heads {
    pub fn load(
        src: &mut dyn ParamSource,
        cfg: &HeadConfig,
        fpn_channels: usize,
        num_anchors: usize,
    ) -> Result<Self, ModelError> {
        let f = fpn_channels;
        Ok(Self {
            cls_tower: tower(src, "cls", cfg.tower_depth, f)?,
            cls_out: ConvParams::load(src, "head.cls.out", num_anchors * cfg.num_classes, f, 3)?,
            box_tower: tower(src, "box", cfg.tower_depth, f)?,
            box_out: ConvParams::load(src, "head.box.out", num_anchors * 6, f, 3)?,
            seg: ConvParams::load(src, "head.seg", cfg.seg_classes, f, 1)?,
            num_anchors,
            num_classes: cfg.num_classes,
        })
    }

    fn run_tower(tower: &[ConvParams], out: &ConvParams, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut h = x.clone();
        for t in tower {
            h = t.conv(&h, 1, 1)?.map(relu);
        }
        out.conv(&h, 1, 1)
    }

    /// `pyramid[0]` feeds segmentation; `pyramid[1..]` feed detection.
    pub fn forward(&self, pyramid: &[Tensor]) -> Result<ModelOutput, ModelError> {
        if pyramid.len() < 2 {
            return Err(ModelError::Config("heads need at least two pyramid levels".into()));
        }
        let seg_logits = self.seg.conv(&pyramid[0], 1, 0)?;
        let mut class_logits = Vec::new();
        let mut box_deltas = Vec::new();
        for level in &pyramid[1..] {
            let cls = Self::run_tower(&self.cls_tower, &self.cls_out, level)?;
            class_logits.push(cell_major(&cls, self.num_classes));
            let bx = Self::run_tower(&self.box_tower, &self.box_out, level)?;
            box_deltas.push(cell_major(&bx, 6));
        }
        Ok(ModelOutput {
            class_logits,
            box_deltas,
            seg_logits,
            reconstruction: None,
        })
    }
}

/// Reconstruction head on the coarsest feature: transposed convolution
/// (kernel = stride = `first_stride`), GELU, transposed convolution back to
/// input resolution and channel count.
#[derive(Debug, Clone)]
pub struct SslHead {
    pub up1: ConvParams,
    pub up2: ConvParams,
    pub strides: [usize; 2],
}

impl SslHead {
    pub fn load(
        src: &mut dyn ParamSource,
        cfg: &SslHeadConfig,
        bottleneck_channels: usize,
        bottleneck_stride: usize,
        out_channels: usize,
    ) -> Result<Self, ModelError> {
        let s1 = cfg.first_stride;
        if s1 == 0 || bottleneck_stride % s1 != 0 || cfg.hidden == 0 {
            return Err(ModelError::Config(format!(
                "reconstruction head stride {s1} does not divide bottleneck stride {bottleneck_stride}"
            )));
        }
        let s2 = bottleneck_stride / s1;
        Ok(Self {
            up1: ConvParams::load_transposed(src, "ssl.up1", bottleneck_channels, cfg.hidden, s1)?,
            up2: ConvParams::load_transposed(src, "ssl.up2", cfg.hidden, out_channels, s2)?,
            strides: [s1, s2],
        })
    }

    pub fn forward(&self, bottleneck: &Tensor) -> Result<Tensor, ModelError> {
        let h = self.up1.conv_transpose(bottleneck, self.strides[0])?.map(gelu);
        self.up2.conv_transpose(&h, self.strides[1])
    }
}
