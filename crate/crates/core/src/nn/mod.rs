//! Dense forward kernels and the named-tensor weight container.
//!
//! Compute is `f64`; storage on disk is `f32`. Kernels only parallelize over
//! independent output elements, and every reduction runs in a fixed order, so
//! results are bitwise identical for any rayon thread count.

mod conv;
mod ops;
mod tensor;
mod weights;

pub use conv::{conv3d, conv_transpose3d, trilinear_upsample, upsample_taps};
pub use ops::{
    dot, gelu, layer_norm, layer_norm_row, linear, linear_row, relu, sigmoid, softmax, softmax_in_place,
    LAYER_NORM_EPS,
};
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights, WeightStore};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("tensor name '{0}' already present")]
    NameCollision(String),
    #[error("missing tensor '{0}'")]
    MissingTensor(String),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
