//! Training objectives as value-and-gradient functions, plus the learning-rate
//! schedule.
//!
//! Nothing here updates parameters; gradients exist so that every objective
//! can be verified against finite differences.

mod box_loss;
mod classification;
mod contrastive;
mod schedule;

pub use box_loss::{giou_loss, BoxParams};
pub use classification::{cross_entropy, dice_loss, focal_loss, FocalConfig};
pub use contrastive::{ntxent_loss, NtXentConfig, DEFAULT_TEMPERATURE};
pub use schedule::WarmPolySchedule;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("probability {0} at index {1} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64, usize),
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Scalar loss with its gradient, aligned with the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// How the reconstruction and contrastive terms combine in pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslLossMode {
    /// `l_rec * (1 + l_con)`, the multiplicative coupling.
    #[default]
    AsWritten,
    /// `l_rec + l_con`.
    Additive,
}

pub fn ssl_total(l_rec: f64, l_con: f64, mode: SslLossMode) -> f64 {
    match mode {
        SslLossMode::AsWritten => l_rec * (1.0 + l_con),
        SslLossMode::Additive => l_rec + l_con,
    }
}

/// Unweighted multitask detection objective.
pub fn detection_total(seg_dice: f64, seg_ce: f64, box_giou: f64, box_ce: f64) -> f64 {
    seg_dice + seg_ce + box_giou + box_ce
}

/// Mean absolute error with subgradient 0 at exact ties.
pub fn reconstruction_loss(pred: &[f64], target: &[f64]) -> Result<LossValueGrad, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(LossError::InvalidConfig("empty input".into()));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let gradient = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            value += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValueGrad {
        value: value / n,
        gradient,
    })
}
