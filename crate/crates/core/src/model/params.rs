use crate::nn::{Tensor, WeightStore};

use super::ModelError;

/// Where layer parameters come from. Loading a network through a
/// [`ShapeCollector`] instead of a [`WeightStore`] yields its full parameter
/// list, so names and shapes are defined in exactly one place.
pub trait ParamSource {
    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Tensor, ModelError>;
}

impl ParamSource for &WeightStore {
    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Tensor, ModelError> {
        Ok(self.get_shaped(name, shape)?)
    }
}

/// Records every requested `(name, shape)` and hands out placeholder zeros.
#[derive(Debug, Default)]
pub struct ShapeCollector {
    pub specs: Vec<(String, Vec<usize>)>,
}

impl ParamSource for ShapeCollector {
    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Tensor, ModelError> {
        self.specs.push((name.to_string(), shape.to_vec()));
        Ok(Tensor::zeros(shape))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormParams {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, dim: usize) -> Result<Self, ModelError> {
        Ok(Self {
            gamma: src.tensor(&format!("{prefix}.weight"), &[dim])?,
            beta: src.tensor(&format!("{prefix}.bias"), &[dim])?,
        })
    }
}

/// `weight` is `[out, in]`.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl LinearParams {
    pub fn load(
        src: &mut dyn ParamSource,
        prefix: &str,
        out_dim: usize,
        in_dim: usize,
        bias: bool,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            weight: src.tensor(&format!("{prefix}.weight"), &[out_dim, in_dim])?,
            bias: if bias {
                Some(src.tensor(&format!("{prefix}.bias"), &[out_dim])?)
            } else {
                None
            },
        })
    }

    pub fn bias_slice(&self) -> Option<&[f64]> {
        self.bias.as_ref().map(Tensor::data)
    }
}

/// Convolution weight `[C_out, C_in, k, k, k]` (or `[C_in, C_out, k, k, k]`
/// for transposed convolutions) with a bias per output channel.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn load(
        src: &mut dyn ParamSource,
        prefix: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            weight: src.tensor(&format!("{prefix}.weight"), &[c_out, c_in, k, k, k])?,
            bias: src.tensor(&format!("{prefix}.bias"), &[c_out])?,
        })
    }

    pub fn load_transposed(
        src: &mut dyn ParamSource,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            weight: src.tensor(&format!("{prefix}.weight"), &[c_in, c_out, k, k, k])?,
            bias: src.tensor(&format!("{prefix}.bias"), &[c_out])?,
        })
    }

    pub fn conv(&self, x: &Tensor, stride: usize, pad: usize) -> Result<Tensor, ModelError> {
        Ok(crate::nn::conv3d(x, &self.weight, Some(&self.bias), stride, pad)?)
    }

    pub fn conv_transpose(&self, x: &Tensor, stride: usize) -> Result<Tensor, ModelError> {
        Ok(crate::nn::conv_transpose3d(x, &self.weight, Some(&self.bias), stride)?)
    }
}
