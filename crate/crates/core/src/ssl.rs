//! Self-supervised corruption transforms and paired-view construction.
//!
//! Every transform owns a [`DetRng`] seeded from `CorruptionConfig::rng_seed`
//! and consumes it in a fixed, documented order, so outputs are reproducible
//! from the seed alone:
//!
//! 1. `coarse_dropout` draws the mode first: `uniform() < keep_mode_prob`
//!    selects keep mode.
//! 2. Regions are drawn next, one at a time. Per region and per axis in
//!    `(z, y, x)` order: `size = min + below(max - min + 1)`, then
//!    `start = below(dim - size + 1)`.
//! 3. Replace mode draws one fill `range(lo, hi)` per region, in region
//!    order, written to every channel; later regions overwrite earlier ones.
//!    Keep mode walks the tensor in flat order (channel, z, y, x) and draws a
//!    fill for every voxel not covered by any region.
//! 4. `pixel_shuffle` draws its regions as in step 2 (no mode draw), then for
//!    each region and each channel runs Fisher-Yates over the region's voxels
//!    in flat order: for `i` from `len - 1` down to 1, swap `i` with
//!    `below(i + 1)`.

use crate::nn::Tensor;
use crate::rng::DetRng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SslError {
    #[error("invalid corruption config: {0}")]
    InvalidConfig(String),
    #[error("shape error: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub rng_seed: u64,
    pub n_regions: usize,
    /// Inclusive per-axis region size bounds in voxels.
    pub region_size_range: [usize; 2],
    pub dropout_fill_range: [f64; 2],
    pub keep_mode_prob: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            n_regions: 8,
            region_size_range: [4, 16],
            dropout_fill_range: [0.0, 0.2],
            keep_mode_prob: 0.5,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        let [lo, hi] = self.dropout_fill_range;
        let bad = if self.n_regions == 0 {
            Some("n_regions must be at least 1".to_string())
        } else if self.region_size_range[0] > self.region_size_range[1] {
            Some(format!("region_size_range {:?} is not ordered", self.region_size_range))
        } else if !(0.0 <= lo && lo <= hi && hi <= 0.2) {
            Some(format!("dropout_fill_range {:?} must be ordered within [0, 0.2]", self.dropout_fill_range))
        } else if !(0.0..=1.0).contains(&self.keep_mode_prob) {
            Some(format!("keep_mode_prob {} outside [0, 1]", self.keep_mode_prob))
        } else {
            None
        };
        match bad {
            Some(msg) => Err(SslError::InvalidConfig(msg)),
            None => Ok(()),
        }
    }
}

/// Half-open voxel region `[start, start + size)` per axis `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub start: [usize; 3],
    pub size: [usize; 3],
}

impl Region {
    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z, y, x];
        (0..3).all(|a| p[a] >= self.start[a] && p[a] < self.start[a] + self.size[a])
    }
}

/// Which dropout variant a call applied, with its regions.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutTrace {
    pub keep_mode: bool,
    pub regions: Vec<Region>,
}

fn spatial_dims(patch: &Tensor) -> Result<[usize; 4], SslError> {
    match *patch.shape() {
        [c, d, h, w] => Ok([c, d, h, w]),
        ref s => Err(SslError::Shape(format!("expected C x D x H x W, got {s:?}"))),
    }
}

fn check_fits(cfg: &CorruptionConfig, dims: [usize; 3]) -> Result<(), SslError> {
    let max = cfg.region_size_range[1];
    if dims.iter().any(|&d| max > d) {
        return Err(SslError::InvalidConfig(format!(
            "region size up to {max} does not fit patch {dims:?}"
        )));
    }
    Ok(())
}

fn draw_regions(rng: &mut DetRng, cfg: &CorruptionConfig, dims: [usize; 3]) -> Vec<Region> {
    let [lo, hi] = cfg.region_size_range;
    (0..cfg.n_regions)
        .map(|_| {
            let mut start = [0; 3];
            let mut size = [0; 3];
            for a in 0..3 {
                size[a] = lo + rng.below((hi - lo + 1) as u64) as usize;
                start[a] = rng.below((dims[a] - size[a] + 1) as u64) as usize;
            }
            Region { start, size }
        })
        .collect()
}

fn for_each_voxel(r: &Region, mut f: impl FnMut(usize, usize, usize)) {
    for z in r.start[0]..r.start[0] + r.size[0] {
        for y in r.start[1]..r.start[1] + r.size[1] {
            for x in r.start[2]..r.start[2] + r.size[2] {
                f(z, y, x);
            }
        }
    }
}

/// Coarse dropout, returning the corrupted patch and the trace of what was
/// applied.
pub fn coarse_dropout_traced(patch: &Tensor, cfg: &CorruptionConfig) -> Result<(Tensor, DropoutTrace), SslError> {
    cfg.validate()?;
    let [c, d, h, w] = spatial_dims(patch)?;
    check_fits(cfg, [d, h, w])?;
    let mut rng = DetRng::new(cfg.rng_seed);
    let keep_mode = rng.uniform() < cfg.keep_mode_prob;
    let regions = draw_regions(&mut rng, cfg, [d, h, w]);
    let [lo, hi] = cfg.dropout_fill_range;
    let mut out = patch.clone();
    let vol = d * h * w;
    let data = out.data_mut();
    if keep_mode {
        let mut covered = vec![false; vol];
        for r in &regions {
            for_each_voxel(r, |z, y, x| covered[(z * h + y) * w + x] = true);
        }
        for ch in 0..c {
            for (i, &cov) in covered.iter().enumerate() {
                if !cov {
                    data[ch * vol + i] = rng.range(lo, hi);
                }
            }
        }
    } else {
        for r in &regions {
            let fill = rng.range(lo, hi);
            for ch in 0..c {
                for_each_voxel(r, |z, y, x| data[ch * vol + (z * h + y) * w + x] = fill);
            }
        }
    }
    Ok((out, DropoutTrace { keep_mode, regions }))
}

pub fn coarse_dropout(patch: &Tensor, cfg: &CorruptionConfig) -> Result<Tensor, SslError> {
    coarse_dropout_traced(patch, cfg).map(|(t, _)| t)
}

/// Permutes voxel values inside random regions, independently per channel.
pub fn pixel_shuffle(patch: &Tensor, cfg: &CorruptionConfig) -> Result<Tensor, SslError> {
    cfg.validate()?;
    let [c, d, h, w] = spatial_dims(patch)?;
    check_fits(cfg, [d, h, w])?;
    let mut rng = DetRng::new(cfg.rng_seed);
    let regions = draw_regions(&mut rng, cfg, [d, h, w]);
    let vol = d * h * w;
    let mut out = patch.clone();
    let data = out.data_mut();
    let mut idx = Vec::new();
    for r in &regions {
        idx.clear();
        for_each_voxel(r, |z, y, x| idx.push((z * h + y) * w + x));
        for ch in 0..c {
            let base = ch * vol;
            for i in (1..idx.len()).rev() {
                let j = rng.below(i as u64 + 1) as usize;
                data.swap(base + idx[i], base + idx[j]);
            }
        }
    }
    Ok(out)
}

/// Two independently corrupted copies of `patch`. View `k` (0 or 1) applies
/// dropout with sub-stream `2k` of `seed` and then shuffle with sub-stream
/// `2k + 1`; `params.rng_seed` is ignored.
pub fn make_views(patch: &Tensor, seed: u64, params: &CorruptionConfig) -> Result<(Tensor, Tensor), SslError> {
    if patch.data().iter().any(|v| !v.is_finite()) {
        return Err(SslError::Shape("patch contains non-finite values".into()));
    }
    let view = |k: u64| -> Result<Tensor, SslError> {
        let drop = CorruptionConfig {
            rng_seed: DetRng::substream_seed(seed, 2 * k),
            ..params.clone()
        };
        let shuffle = CorruptionConfig {
            rng_seed: DetRng::substream_seed(seed, 2 * k + 1),
            ..params.clone()
        };
        pixel_shuffle(&coarse_dropout(patch, &drop)?, &shuffle)
    };
    Ok((view(0)?, view(1)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| i as f64 * 0.001).collect()).unwrap()
    }

    #[test]
    fn replace_mode_range() {
        let p = Tensor::full(&[2, 16, 16, 16], 0.5);
        let cfg = CorruptionConfig {
            keep_mode_prob: 0.0,
            ..Default::default()
        };
        let out = coarse_dropout(&p, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5 || (0.0..=0.2).contains(&v)));
        assert!(out.data().iter().any(|&v| v != 0.5));
    }

    #[test]
    fn zero_size_regions_are_noop() {
        let p = ramp(&[1, 8, 8, 8]);
        let cfg = CorruptionConfig {
            region_size_range: [0, 0],
            keep_mode_prob: 0.0,
            ..Default::default()
        };
        assert_eq!(coarse_dropout(&p, &cfg).unwrap(), p);
        assert_eq!(pixel_shuffle(&p, &cfg).unwrap(), p);
    }

    #[test]
    fn region_too_large() {
        let p = ramp(&[1, 8, 8, 8]);
        assert!(matches!(
            coarse_dropout(&p, &CorruptionConfig::default()),
            Err(SslError::InvalidConfig(_))
        ));
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let p = ramp(&[2, 6, 6, 6]);
        let cfg = CorruptionConfig {
            n_regions: 1,
            region_size_range: [6, 6],
            rng_seed: 3,
            ..Default::default()
        };
        let out = pixel_shuffle(&p, &cfg).unwrap();
        assert_ne!(out, p);
        let vol = 216;
        for ch in 0..2 {
            let mut a = p.data()[ch * vol..(ch + 1) * vol].to_vec();
            let mut b = out.data()[ch * vol..(ch + 1) * vol].to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn views_deterministic_and_distinct() {
        let p = ramp(&[1, 16, 16, 16]);
        let cfg = CorruptionConfig::default();
        let (a, b) = make_views(&p, 9, &cfg).unwrap();
        let (a2, b2) = make_views(&p, 9, &cfg).unwrap();
        assert_eq!((&a, &b), (&a2, &b2));
        assert_ne!(a, b);
        assert_ne!(a, p);
        let (c, _) = make_views(&p, 10, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        let bad = [
            CorruptionConfig { n_regions: 0, ..Default::default() },
            CorruptionConfig { region_size_range: [5, 4], ..Default::default() },
            CorruptionConfig { dropout_fill_range: [0.0, 0.3], ..Default::default() },
            CorruptionConfig { keep_mode_prob: 1.5, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
