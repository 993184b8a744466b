use super::{LossError, LossValueGrad};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NtXentConfig {
    pub temperature: f64,
}

impl Default for NtXentConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Normalized-temperature cross-entropy over paired views.
///
/// `view_a` and `view_b` are row-major `n x dim`; row `i` of each is a
/// positive pair. The 2n rows are L2-normalized; each row's positive is its
/// partner and the other 2n-2 rows are negatives. The loss is the mean over
/// all 2n rows of `-ln(exp(s+/t) / sum_{j != i} exp(s_ij/t))`. The gradient
/// is w.r.t. the raw embeddings, `view_a` rows first, then `view_b`.
pub fn ntxent_loss(
    view_a: &[f64],
    view_b: &[f64],
    dim: usize,
    cfg: &NtXentConfig,
) -> Result<LossValueGrad, LossError> {
    let tau = cfg.temperature;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::InvalidConfig(format!("temperature {tau}")));
    }
    if view_a.len() != view_b.len() {
        return Err(LossError::LengthMismatch(view_a.len(), view_b.len()));
    }
    if dim == 0 || view_a.len() % dim != 0 {
        return Err(LossError::InvalidConfig(format!(
            "{} values do not form rows of {dim}",
            view_a.len()
        )));
    }
    let n = view_a.len() / dim;
    if n < 2 {
        return Err(LossError::InvalidConfig(format!("need at least 2 pairs, got {n}")));
    }
    let m = 2 * n;
    let rows: Vec<&[f64]> = view_a.chunks_exact(dim).chain(view_b.chunks_exact(dim)).collect();
    let mut norms = Vec::with_capacity(m);
    let mut unit = Vec::with_capacity(m * dim);
    for (i, r) in rows.iter().enumerate() {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(LossError::ZeroNormRow(i));
        }
        norms.push(norm);
        unit.extend(r.iter().map(|v| v / norm));
    }
    let u = |i: usize| &unit[i * dim..(i + 1) * dim];
    let partner = |i: usize| if i < n { i + n } else { i - n };

    let mut sim = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            sim[i * m + j] = u(i).iter().zip(u(j)).map(|(a, b)| a * b).sum::<f64>() / tau;
        }
    }

    // prob[i][j] = softmax over j != i of sim[i][j]
    let mut prob = vec![0.0; m * m];
    let mut value = 0.0;
    for i in 0..m {
        let row = &sim[i * m..(i + 1) * m];
        let max = (0..m).filter(|&j| j != i).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..m).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + sum.ln();
        value += lse - row[partner(i)];
        for j in (0..m).filter(|&j| j != i) {
            prob[i * m + j] = (row[j] - lse).exp();
        }
    }
    value /= m as f64;

    let scale = 1.0 / (m as f64 * tau);
    let mut gradient = vec![0.0; m * dim];
    for i in 0..m {
        let mut g = vec![0.0; dim];
        for j in (0..m).filter(|&j| j != i) {
            let mut c = prob[i * m + j] + prob[j * m + i];
            if j == partner(i) {
                c -= 2.0;
            }
            for (gk, uk) in g.iter_mut().zip(u(j)) {
                *gk += c * scale * uk;
            }
        }
        // project out the radial component of the normalization
        let ui = u(i);
        let radial: f64 = ui.iter().zip(&g).map(|(a, b)| a * b).sum();
        for k in 0..dim {
            gradient[i * dim + k] = (g[k] - ui[k] * radial) / norms[i];
        }
    }
    Ok(LossValueGrad { value, gradient })
}
