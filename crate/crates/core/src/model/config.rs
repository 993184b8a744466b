use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Swin,
    Conv,
}

impl std::str::FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "swin" => Ok(EncoderKind::Swin),
            "conv" => Ok(EncoderKind::Conv),
            _ => Err(ModelError::Config(format!("unknown encoder '{s}' (expected swin or conv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwinConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    /// Cubic attention window edge in tokens.
    pub window: usize,
    pub mlp_ratio: usize,
}

impl Default for SwinConfig {
    fn default() -> Self {
        Self {
            patch_size: 2,
            embed_dim: 96,
            depths: vec![2, 2, 6, 2],
            heads: vec![3, 6, 12, 24],
            window: 4,
            mlp_ratio: 4,
        }
    }
}

impl SwinConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.patch_size == 0 || self.embed_dim == 0 || self.window == 0 || self.mlp_ratio == 0 {
            return err(format!("swin sizes must be positive: {self:?}"));
        }
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return err(format!(
                "swin depths {:?} and heads {:?} must be non-empty and equally long",
                self.depths, self.heads
            ));
        }
        for (s, &h) in self.heads.iter().enumerate() {
            let dim = self.stage_dim(s);
            if h == 0 || dim % h != 0 {
                return err(format!("stage {s}: dim {dim} not divisible by {h} heads"));
            }
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    /// Token dimension inside stage `s` (before its merge).
    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    /// Input extents must be multiples of this: every stage ends in a merge
    /// that halves the grid.
    pub fn input_divisor(&self) -> usize {
        self.patch_size << self.num_stages()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvEncoderConfig {
    pub base_channels: usize,
    pub stages: usize,
}

impl Default for ConvEncoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            stages: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpnConfig {
    pub fpn_channels: usize,
    /// Pyramid levels used for detection. The pyramid has one more level
    /// (the finest), reserved for segmentation.
    pub detection_levels: usize,
}

impl Default for FpnConfig {
    fn default() -> Self {
        Self {
            fpn_channels: 32,
            detection_levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub tower_depth: usize,
    pub num_classes: usize,
    pub seg_classes: usize,
    /// Anchor base sizes per detection level, in voxels.
    pub base_sizes: Vec<Vec<f64>>,
    pub aspect_ratios: Vec<[f64; 3]>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            tower_depth: 2,
            num_classes: 1,
            seg_classes: 2,
            base_sizes: vec![vec![4.0], vec![8.0], vec![16.0]],
            aspect_ratios: vec![[1.0, 1.0, 1.0], [2.0, 1.0, 1.0], [1.0, 1.0, 2.0]],
        }
    }
}

impl HeadConfig {
    /// Anchor templates per cell at level `l`.
    pub fn num_anchors(&self, level: usize) -> usize {
        self.base_sizes[level].len() * self.aspect_ratios.len()
    }
}

/// Reconstruction head on the bottleneck: two transposed convolutions with
/// kernel = stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslHeadConfig {
    pub hidden: usize,
    /// Stride of the first transposed convolution; the second covers the
    /// remaining factor to input resolution.
    pub first_stride: usize,
}

impl Default for SslHeadConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            first_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// 2 (PET, CT) or 3 (PET, CT, anatomy).
    pub in_channels: usize,
    pub swin: SwinConfig,
    pub conv: ConvEncoderConfig,
    pub fpn: FpnConfig,
    pub head: HeadConfig,
    pub ssl: SslHeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Swin,
            in_channels: 3,
            swin: SwinConfig::default(),
            conv: ConvEncoderConfig::default(),
            fpn: FpnConfig::default(),
            head: HeadConfig::default(),
            ssl: SslHeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.in_channels == 0 {
            return err("in_channels must be positive".into());
        }
        match self.encoder {
            EncoderKind::Swin => self.swin.validate()?,
            EncoderKind::Conv => {
                if self.conv.base_channels == 0 || self.conv.stages == 0 {
                    return err(format!("conv encoder sizes must be positive: {:?}", self.conv));
                }
            }
        }
        let n_feat = self.feature_strides().len();
        if self.fpn.fpn_channels == 0 || self.fpn.detection_levels == 0 {
            return err(format!("fpn sizes must be positive: {:?}", self.fpn));
        }
        if self.fpn.detection_levels + 1 > n_feat {
            return err(format!(
                "{} detection levels need {} encoder features, encoder has {n_feat}",
                self.fpn.detection_levels,
                self.fpn.detection_levels + 1
            ));
        }
        let h = &self.head;
        if h.num_classes == 0 || h.seg_classes == 0 {
            return err("head class counts must be positive".into());
        }
        if h.base_sizes.len() != self.fpn.detection_levels {
            return err(format!(
                "{} anchor size lists for {} detection levels",
                h.base_sizes.len(),
                self.fpn.detection_levels
            ));
        }
        if h.aspect_ratios.is_empty() || h.base_sizes.iter().any(Vec::is_empty) {
            return err("anchor sizes and ratios must be non-empty".into());
        }
        Ok(())
    }

    /// Strides of the encoder features, finest first.
    pub fn feature_strides(&self) -> Vec<usize> {
        match self.encoder {
            EncoderKind::Swin => (0..=self.swin.num_stages()).map(|i| self.swin.patch_size << i).collect(),
            EncoderKind::Conv => (1..=self.conv.stages).map(|i| 1 << i).collect(),
        }
    }

    /// Channel counts of the encoder features, finest first.
    pub fn feature_channels(&self) -> Vec<usize> {
        match self.encoder {
            EncoderKind::Swin => (0..=self.swin.num_stages()).map(|i| self.swin.embed_dim << i).collect(),
            EncoderKind::Conv => (0..self.conv.stages).map(|i| self.conv.base_channels << i).collect(),
        }
    }

    /// Spatial extents of an input volume must be multiples of this.
    pub fn input_divisor(&self) -> usize {
        *self.feature_strides().last().expect("validated encoder has features")
    }

    /// Strides of the detection levels (pyramid levels 1..).
    pub fn detection_strides(&self) -> Vec<usize> {
        self.feature_strides()[1..=self.fpn.detection_levels].to_vec()
    }

    pub fn check_input(&self, channels: usize, shape: [usize; 3]) -> Result<(), ModelError> {
        if channels != self.in_channels {
            return Err(ModelError::Config(format!(
                "model expects {} input channels, volume has {channels}",
                self.in_channels
            )));
        }
        let div = self.input_divisor();
        if shape.iter().any(|&n| n == 0 || n % div != 0) {
            return Err(ModelError::Config(format!(
                "input shape {shape:?} must be a positive multiple of {div} on every axis"
            )));
        }
        Ok(())
    }
}

/// Post-processing thresholds for [`super::infer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocConfig {
    pub min_score: f64,
    /// Minimum box volume in voxels.
    pub min_volume: f64,
    pub nms_iou: f64,
    /// Candidates kept (by score) before decoding and NMS.
    pub pre_nms_top_k: usize,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            min_score: 0.05,
            min_volume: 0.0,
            nms_iou: crate::geometry::DEFAULT_NMS_IOU,
            pre_nms_top_k: 1000,
        }
    }
}
