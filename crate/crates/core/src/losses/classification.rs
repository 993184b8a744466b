use super::{LossError, LossValueGrad};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(LossError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Binary focal loss, mean over elements, with gradient w.r.t. `probs`.
///
/// Per element: `-alpha_t (1 - p_t)^gamma ln p_t`, where `p_t = p` and
/// `alpha_t = alpha` for positives, `p_t = 1 - p` and `alpha_t = 1 - alpha`
/// for negatives. Probabilities must lie strictly inside (0, 1); clamp
/// upstream.
pub fn focal_loss(probs: &[f64], targets: &[bool], cfg: &FocalConfig) -> Result<LossValueGrad, LossError> {
    cfg.validate()?;
    if probs.len() != targets.len() {
        return Err(LossError::LengthMismatch(probs.len(), targets.len()));
    }
    if probs.is_empty() {
        return Err(LossError::InvalidConfig("empty input".into()));
    }
    let n = probs.len() as f64;
    let gamma = cfg.gamma;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(probs.len());
    for (i, (&p, &t)) in probs.iter().zip(targets).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(LossError::ProbabilityOutOfRange(p, i));
        }
        let (pt, alpha_t, sign) = if t {
            (p, cfg.alpha, 1.0)
        } else {
            (1.0 - p, 1.0 - cfg.alpha, -1.0)
        };
        let q = 1.0 - pt;
        let log_pt = pt.ln();
        let modulator = q.powf(gamma);
        value += -alpha_t * modulator * log_pt;
        // d/dpt [-(1-pt)^g ln pt] = g (1-pt)^(g-1) ln pt - (1-pt)^g / pt
        let d_modulator = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
        let d_pt = alpha_t * (d_modulator * log_pt - modulator / pt);
        gradient.push(sign * d_pt / n);
    }
    Ok(LossValueGrad {
        value: value / n,
        gradient,
    })
}

/// Soft Dice loss `1 - (2 sum(p t) + s) / (sum p + sum t + s)`.
pub fn dice_loss(probs: &[f64], targets: &[f64], smooth: f64) -> Result<LossValueGrad, LossError> {
    if probs.len() != targets.len() {
        return Err(LossError::LengthMismatch(probs.len(), targets.len()));
    }
    if !(smooth > 0.0) {
        return Err(LossError::InvalidConfig(format!("smooth must be positive, got {smooth}")));
    }
    let inter: f64 = probs.iter().zip(targets).map(|(p, t)| p * t).sum();
    let sp: f64 = probs.iter().sum();
    let st: f64 = targets.iter().sum();
    let num = 2.0 * inter + smooth;
    let den = sp + st + smooth;
    let gradient = targets
        .iter()
        .map(|&t| -(2.0 * t * den - num) / (den * den))
        .collect();
    Ok(LossValueGrad {
        value: 1.0 - num / den,
        gradient,
    })
}

/// Softmax cross-entropy, mean over rows. `logits` is row-major `n x k`.
/// Gradient is w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], num_classes: usize, targets: &[usize]) -> Result<LossValueGrad, LossError> {
    let k = num_classes;
    if k < 2 {
        return Err(LossError::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    if logits.len() != targets.len() * k {
        return Err(LossError::LengthMismatch(logits.len(), targets.len() * k));
    }
    if targets.is_empty() {
        return Err(LossError::InvalidConfig("empty input".into()));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= k) {
        return Err(LossError::InvalidConfig(format!("target class {t} >= {k}")));
    }
    let n = targets.len() as f64;
    let mut value = 0.0;
    let mut gradient = vec![0.0; logits.len()];
    for (row, (&t, g)) in logits.chunks_exact(k).zip(targets.iter().zip(gradient.chunks_exact_mut(k))) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        value += lse - row[t];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *gj = (p - if j == t { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok(LossValueGrad {
        value: value / n,
        gradient,
    })
}
