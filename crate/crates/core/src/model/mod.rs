//! Forward-only detector: encoder (shifted-window transformer or plain
//! convolutional), feature pyramid, anchor heads and post-processing, plus the
//! reconstruction head used in self-supervised pretraining.
//!
//! # Weight names
//!
//! All indices are 0-based. `{p}` is a prefix; every `{p}.weight` of a
//! layer norm or bias-carrying layer has a matching `{p}.bias`.
//!
//! | name | shape |
//! |---|---|
//! | `swin.patch_embed.proj.weight` | `[C, C_in, p, p, p]` |
//! | `swin.patch_embed.norm.weight` | `[C]` |
//! | `swin.stage{s}.block{b}.norm1.weight`, `.norm2.weight` | `[C_s]` |
//! | `swin.stage{s}.block{b}.attn.qkv.weight` | `[3 C_s, C_s]` |
//! | `swin.stage{s}.block{b}.attn.proj.weight` | `[C_s, C_s]` |
//! | `swin.stage{s}.block{b}.attn.rel_pos_bias` (no bias pair) | `[(2W-1)^3, heads_s]` |
//! | `swin.stage{s}.block{b}.mlp.fc1.weight` | `[r C_s, C_s]` |
//! | `swin.stage{s}.block{b}.mlp.fc2.weight` | `[C_s, r C_s]` |
//! | `swin.stage{s}.merge.norm.weight` | `[8 C_s]` |
//! | `swin.stage{s}.merge.reduction.weight` (no bias) | `[2 C_s, 8 C_s]` |
//! | `conv.stage{i}.conv0.weight` | `[B 2^i, C_prev, 2, 2, 2]` |
//! | `conv.stage{i}.conv1.weight` | `[B 2^i, B 2^i, 3, 3, 3]` |
//! | `fpn.lateral{i}.weight` | `[F, C_i, 1, 1, 1]` |
//! | `fpn.out{i}.weight` | `[F, F, 3, 3, 3]` |
//! | `head.cls.tower{i}.weight`, `head.box.tower{i}.weight` | `[F, F, 3, 3, 3]` |
//! | `head.cls.out.weight` | `[A K, F, 3, 3, 3]` |
//! | `head.box.out.weight` | `[6 A, F, 3, 3, 3]` |
//! | `head.seg.weight` | `[S, F, 1, 1, 1]` |
//! | `ssl.up1.weight` (transposed) | `[C_last, hidden, s1, s1, s1]` |
//! | `ssl.up2.weight` (transposed) | `[hidden, C_in, s2, s2, s2]` |
//!
//! with `C_s = C 2^s`. Linear weights are `[out, in]`; the qkv output is
//! ordered `(q|k|v, head, head_dim)`. Box channel `a * 6 + j` holds
//! component `j` of `(dz, dy, dx, sz, sy, sx)` for anchor template `a`;
//! class channel `a * K + k` holds class `k`.

mod config;
mod layers;
mod params;
pub mod swin;

pub use config::{
    ConvEncoderConfig, EncoderKind, FpnConfig, HeadConfig, ModelConfig, PostprocConfig, SslHeadConfig, SwinConfig,
};
pub use layers::{ConvEncoder, Fpn, Heads, ModelOutput, SslHead};
pub use params::{ConvParams, LayerNormParams, LinearParams, ParamSource, ShapeCollector};
pub use swin::SwinEncoder;

use crate::geometry::{
    decode, filter_detections, generate_anchors, nms, score_order, BoxDelta, Detection, GeometryError, LESION_LABEL,
};
use crate::nn::{sigmoid, NnError, Tensor, WeightStore};
use crate::rng::DetRng;
use crate::volume::Volume;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed model description: {0}")]
    Description(#[from] serde_json::Error),
}

/// Predicted log shape ratios are clamped to `ln(1000 / 16)` before
/// decoding so untrained weights cannot overflow box extents.
pub const MAX_LOG_SHAPE_RATIO: f64 = 4.135_166_556_742_356;

#[derive(Debug, Clone)]
pub enum Encoder {
    Swin(SwinEncoder),
    Conv(ConvEncoder),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub fpn: Fpn,
    pub heads: Heads,
    pub ssl: Option<SslHead>,
}

impl Model {
    pub fn from_source(cfg: &ModelConfig, src: &mut dyn ParamSource, with_ssl: bool) -> Result<Self, ModelError> {
        cfg.validate()?;
        let encoder = match cfg.encoder {
            EncoderKind::Swin => Encoder::Swin(SwinEncoder::load(src, &cfg.swin, cfg.in_channels)?),
            EncoderKind::Conv => Encoder::Conv(ConvEncoder::load(src, &cfg.conv, cfg.in_channels)?),
        };
        let chans = cfg.feature_channels();
        let fpn = Fpn::load(src, &chans, cfg.fpn.fpn_channels, cfg.fpn.detection_levels + 1)?;
        let anchors = cfg.head.num_anchors(0);
        if (0..cfg.fpn.detection_levels).any(|l| cfg.head.num_anchors(l) != anchors) {
            return Err(ModelError::Config(
                "shared heads need the same number of anchor templates on every level".into(),
            ));
        }
        let heads = Heads::load(src, &cfg.head, cfg.fpn.fpn_channels, anchors)?;
        let ssl = if with_ssl {
            Some(SslHead::load(
                src,
                &cfg.ssl,
                *chans.last().expect("validated"),
                cfg.input_divisor(),
                cfg.in_channels,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            fpn,
            heads,
            ssl,
        })
    }

    /// Load from a weight store; the reconstruction head is loaded when the
    /// store carries it.
    pub fn load(cfg: &ModelConfig, store: &WeightStore) -> Result<Self, ModelError> {
        let mut src = store;
        Self::from_source(cfg, &mut src, store.contains("ssl.up1.weight"))
    }

    fn check_tensor(&self, x: &Tensor) -> Result<(), ModelError> {
        x.expect_rank(4, "model input")?;
        let s = x.shape();
        self.cfg.check_input(s[0], [s[1], s[2], s[3]])
    }

    /// Encoder features, finest first, channels first.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        self.check_tensor(x)?;
        match &self.encoder {
            Encoder::Swin(e) => e.forward(x),
            Encoder::Conv(e) => e.forward(x),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<ModelOutput, ModelError> {
        let feats = self.encode(x)?;
        let pyramid = self.fpn.forward(&feats)?;
        self.heads.forward(&pyramid)
    }

    /// Reconstruction of `x` from the coarsest encoder feature.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let head = self
            .ssl
            .as_ref()
            .ok_or_else(|| ModelError::Nn(NnError::MissingTensor("ssl.up1.weight".into())))?;
        let feats = self.encode(x)?;
        let out = head.forward(feats.last().expect("encoder yields features"))?;
        if out.shape() != x.shape() {
            return Err(ModelError::Config(format!(
                "reconstruction {:?} does not match input {:?}",
                out.shape(),
                x.shape()
            )));
        }
        Ok(out)
    }

    /// Full detection pipeline on one volume: forward, sigmoid scores,
    /// decode against the anchors, clip to the volume, score/size filter,
    /// NMS.
    pub fn infer(&self, volume: &Volume, case_id: &str, post: &PostprocConfig) -> Result<Vec<Detection>, ModelError> {
        let shape = volume.shape();
        let x = volume_tensor(volume)?;
        let out = self.forward(&x)?;
        let anchors = generate_anchors(
            shape,
            &self.cfg.detection_strides(),
            &self.cfg.head.base_sizes,
            &self.cfg.head.aspect_ratios,
        )?;
        let k = self.cfg.head.num_classes;
        // (level, anchor index within level, class, score)
        let mut candidates = Vec::new();
        for (l, logits) in out.class_logits.iter().enumerate() {
            if logits.len() != anchors.levels[l].anchors.len() * k {
                return Err(ModelError::Config(format!(
                    "level {l}: {} logits for {} anchors",
                    logits.len(),
                    anchors.levels[l].anchors.len()
                )));
            }
            for (i, row) in logits.chunks_exact(k).enumerate() {
                let mut best = 0;
                for c in 1..k {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                let score = sigmoid(row[best]);
                if score.is_nan() {
                    return Err(ModelError::Geometry(GeometryError::NonFinite));
                }
                if score >= post.min_score {
                    candidates.push((l, i, best, score));
                }
            }
        }
        let order = score_order(candidates.iter().map(|c| c.3));
        let mut dets = Vec::new();
        for &ci in order.iter().take(post.pre_nms_top_k) {
            let (l, i, class, score) = candidates[ci];
            let mut delta = BoxDelta::from_slice(&out.box_deltas[l][i * 6..i * 6 + 6]);
            for r in &mut delta.log_shape_ratio {
                *r = r.min(MAX_LOG_SHAPE_RATIO);
            }
            let b = decode(&anchors.levels[l].anchors[i], &delta)?;
            if let Some(b) = b.clip_to(shape) {
                dets.push(Detection::new(case_id, b, score, LESION_LABEL + class as u32));
            }
        }
        let dets = filter_detections(&dets, post.min_score, post.min_volume);
        Ok(nms(&dets, post.nms_iou))
    }
}

/// Channel-first `[C, D, H, W]` tensor of a volume.
pub fn volume_tensor(volume: &Volume) -> Result<Tensor, ModelError> {
    let [d, h, w] = volume.shape();
    Ok(Tensor::new(vec![volume.num_channels(), d, h, w], volume.to_flat())?)
}

/// Names and shapes of every parameter of the configured network.
pub fn param_specs(cfg: &ModelConfig, with_ssl: bool) -> Result<Vec<(String, Vec<usize>)>, ModelError> {
    let mut c = ShapeCollector::default();
    Model::from_source(cfg, &mut c, with_ssl)?;
    Ok(c.specs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// Every parameter 0; all detection scores are then exactly 0.5.
    Zero,
    /// Seeded random weights: layer-norm scales 1, weights
    /// `N(0, 1/fan_in)`, biases and position tables `N(0, 0.02^2)`.
    Random { seed: u64 },
}

/// A complete weight store for `cfg`, with the configuration embedded.
pub fn init_weights(cfg: &ModelConfig, init: WeightInit, with_ssl: bool) -> Result<WeightStore, ModelError> {
    let specs = param_specs(cfg, with_ssl)?;
    let mut store = WeightStore::new();
    let mut rng = match init {
        WeightInit::Zero => None,
        WeightInit::Random { seed } => Some(DetRng::new(seed)),
    };
    for (name, shape) in specs {
        let n: usize = shape.iter().product();
        let data = match rng.as_mut() {
            None => vec![0.0; n],
            Some(rng) => {
                let is_norm_scale = shape.len() == 1 && name.ends_with(".weight");
                if is_norm_scale {
                    vec![1.0; n]
                } else if shape.len() == 1 || name.ends_with("rel_pos_bias") {
                    (0..n).map(|_| 0.02 * rng.normal()).collect()
                } else {
                    let fan_in = if name.starts_with("ssl.") {
                        shape[0] * shape[2..].iter().product::<usize>()
                    } else {
                        shape[1..].iter().product()
                    };
                    let std = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| std * rng.normal()).collect()
                }
            }
        };
        store.insert(&name, &Tensor::new(shape, data)?)?;
    }
    store.set_model(Some(serde_json::to_value(cfg)?));
    Ok(store)
}

/// Model configuration embedded in a weight store, or `fallback` when the
/// store carries none.
pub fn config_from_store(store: &WeightStore, fallback: &ModelConfig) -> Result<ModelConfig, ModelError> {
    match store.model() {
        Some(v) => Ok(serde_json::from_value(v.clone())?),
        None => Ok(fallback.clone()),
    }
}

/// Detections for one fused volume.
pub fn infer(
    volume: &Volume,
    case_id: &str,
    cfg: &ModelConfig,
    store: &WeightStore,
    post: &PostprocConfig,
) -> Result<Vec<Detection>, ModelError> {
    Model::load(cfg, store)?.infer(volume, case_id, post)
}

/// Reconstruction of a pretraining patch `[C_in, D, H, W]`.
pub fn ssl_forward(patch: &Tensor, cfg: &ModelConfig, store: &WeightStore) -> Result<Tensor, ModelError> {
    Model::load(cfg, store)?.reconstruct(patch)
}

/// Global average of a `[C, D, H, W]` feature: one embedding per view for
/// the contrastive objective.
pub fn pooled_embedding(feature: &Tensor) -> Result<Vec<f64>, ModelError> {
    feature.expect_rank(4, "feature")?;
    let c = feature.shape()[0];
    let n = feature.len() / c;
    Ok(feature.data().chunks_exact(n).map(|p| p.iter().sum::<f64>() / n as f64).collect())
}
