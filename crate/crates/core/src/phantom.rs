//! Deterministic synthetic PET/CT/anatomy cases with known lesions.
//!
//! Intensities are in units of the background level `b` and noise `s`:
//! background voxels are `b + noise`, ordinary organs `b + 0.5 s + noise`,
//! hot organs `b + 16 s + noise` and lesions `b + L + noise` with `L`
//! uniform in `[10 s, 16 s]` per lesion. Noise is `s * N(0, 1)` clipped to
//! `[-4 s, 4 s]`, so thresholding at `b + 5 s` separates lesions and hot
//! organs from everything else exactly.
//!
//! Lesions never touch hot organs or each other: each lesion's bounding box
//! grown by one voxel is disjoint from every other lesion's and contains no
//! hot-organ voxel.
//!
//! Draw order from `DetRng::new(seed)`: per organ, three radii then three
//! centers; per lesion attempt, three radii, three centers, then (on
//! acceptance) its level; then one normal per voxel for PET and one per voxel
//! for CT, in flat order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Box3, Detection, GeometryError, LESION_LABEL};
use crate::rng::DetRng;
use crate::volume::{
    connected_components, load_raw, save_raw_mask, save_raw_volume, GridGeometry, GridKind, LabelMask, Volume,
    VolumeError, CT_CHANNEL, MAX_ANATOMY_LABEL, PET_CHANNEL,
};

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("could not place lesion {lesion} after {attempts} attempts")]
    Infeasible { lesion: usize, attempts: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Anatomy labels given to organs in generation order.
pub const ORGAN_LABELS: [u32; 8] = [5, 90, 17, 21, 1, 6, 2, 3];

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Noise is clipped to this many standard deviations.
pub const NOISE_CLIP: f64 = 4.0;

/// Oracle threshold in units of the noise level above background.
pub const THRESHOLD_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub seed: u64,
    pub n_lesions: usize,
    /// Per-axis semi-axis range of lesion ellipsoids, in voxels.
    pub lesion_radius_range: [f64; 2],
    pub n_organs: usize,
    pub organ_radius_range: [f64; 2],
    /// Organ labels with lesion-level uptake.
    pub hot_organ_labels: Vec<u32>,
    pub background: f64,
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: [96; 3],
            seed: 0,
            n_lesions: 3,
            lesion_radius_range: [2.0, 5.0],
            n_organs: 6,
            organ_radius_range: [6.0, 14.0],
            hot_organ_labels: vec![5, 90, 17, 21],
            background: 1.0,
            noise_sigma: 0.1,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        let min_dim = *self.shape.iter().min().expect("three axes") as f64;
        let [lr0, lr1] = self.lesion_radius_range;
        let [or0, or1] = self.organ_radius_range;
        if self.shape.contains(&0) {
            return bad(format!("shape {:?}", self.shape));
        }
        if !(1.0 <= lr0 && lr0 <= lr1) || 2.0 * (lr1 + 1.0) > min_dim {
            return bad(format!("lesion radius range {:?} does not fit {:?}", self.lesion_radius_range, self.shape));
        }
        if self.n_organs > 0 && (!(1.0 <= or0 && or0 <= or1) || 2.0 * or1 > min_dim) {
            return bad(format!("organ radius range {:?} does not fit {:?}", self.organ_radius_range, self.shape));
        }
        if self.n_organs > ORGAN_LABELS.len() {
            return bad(format!("at most {} organs", ORGAN_LABELS.len()));
        }
        if self.hot_organ_labels.iter().any(|&l| l == 0 || l > MAX_ANATOMY_LABEL) {
            return bad(format!("hot organ labels {:?} outside 1..={MAX_ANATOMY_LABEL}", self.hot_organ_labels));
        }
        if !(self.noise_sigma > 0.0) || !self.background.is_finite() {
            return bad("noise sigma must be positive and background finite".into());
        }
        Ok(())
    }

    /// PET level above which only lesions and hot organs lie.
    pub fn threshold(&self) -> f64 {
        self.background + THRESHOLD_SIGMAS * self.noise_sigma
    }

    fn is_hot(&self, label: u32) -> bool {
        label != 0 && self.hot_organ_labels.contains(&label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub pet: Volume,
    pub ct: Volume,
    pub anatomy: LabelMask,
    /// Lesion `i` carries label `i + 1`.
    pub lesions: LabelMask,
    pub gt_boxes: Vec<Box3>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn draw(rng: &mut DetRng, range: [f64; 2], shape: [usize; 3]) -> Self {
        let radii = [(); 3].map(|_| rng.range(range[0], range[1]));
        let mut center = [0.0; 3];
        for a in 0..3 {
            center[a] = rng.range(radii[a], shape[a] as f64 - radii[a]);
        }
        Self { center, radii }
    }

    /// Voxel index range per axis that can contain member voxel centers.
    fn voxel_bounds(&self, shape: [usize; 3]) -> [(usize, usize); 3] {
        [0, 1, 2].map(|a| {
            let lo = (self.center[a] - self.radii[a] - 0.5).floor().max(0.0) as usize;
            let hi = ((self.center[a] + self.radii[a] - 0.5).ceil().max(0.0) as usize + 1).min(shape[a]);
            (lo, hi)
        })
    }

    fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z, y, x];
        (0..3)
            .map(|a| ((p[a] as f64 + 0.5 - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn voxels(&self, shape: [usize; 3]) -> Vec<[usize; 3]> {
        let b = self.voxel_bounds(shape);
        let mut out = Vec::new();
        for z in b[0].0..b[0].1 {
            for y in b[1].0..b[1].1 {
                for x in b[2].0..b[2].1 {
                    if self.contains(z, y, x) {
                        out.push([z, y, x]);
                    }
                }
            }
        }
        out
    }
}

fn tight_box(voxels: &[[usize; 3]]) -> Option<[[usize; 3]; 2]> {
    let first = voxels.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for v in voxels {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    Some([lo, hi.map(|h| h + 1)])
}

fn clipped_noise(rng: &mut DetRng) -> f64 {
    rng.normal().clamp(-NOISE_CLIP, NOISE_CLIP)
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let shape = spec.shape;
    let geometry = GridGeometry::unit(shape)?;
    let n = geometry.len();
    let idx = |v: [usize; 3]| (v[0] * shape[1] + v[1]) * shape[2] + v[2];
    let mut rng = DetRng::new(spec.seed);

    let organs: Vec<Ellipsoid> = (0..spec.n_organs)
        .map(|_| Ellipsoid::draw(&mut rng, spec.organ_radius_range, shape))
        .collect();
    // Ordinary organs first so hot organs are painted on top of overlaps.
    let mut anatomy = vec![0u32; n];
    for hot_pass in [false, true] {
        for (j, o) in organs.iter().enumerate() {
            let label = ORGAN_LABELS[j];
            if spec.is_hot(label) == hot_pass {
                for v in o.voxels(shape) {
                    anatomy[idx(v)] = label;
                }
            }
        }
    }

    let mut lesion_map = vec![0u32; n];
    // Lesion voxel lists, grown boxes and levels.
    let mut lesions: Vec<(Vec<[usize; 3]>, [[usize; 3]; 2], f64)> = Vec::new();
    for i in 0..spec.n_lesions {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let e = Ellipsoid::draw(&mut rng, spec.lesion_radius_range, shape);
            let voxels = e.voxels(shape);
            let Some([lo, hi]) = tight_box(&voxels) else { continue };
            let grown = [lo.map(|v| v.saturating_sub(1)), [0, 1, 2].map(|a| (hi[a] + 1).min(shape[a]))];
            let overlaps_lesion = lesions
                .iter()
                .any(|(_, g, _)| (0..3).all(|a| grown[0][a] < g[1][a] && g[0][a] < grown[1][a]));
            if overlaps_lesion {
                continue;
            }
            let mut touches_hot = false;
            'scan: for z in grown[0][0]..grown[1][0] {
                for y in grown[0][1]..grown[1][1] {
                    for x in grown[0][2]..grown[1][2] {
                        if spec.is_hot(anatomy[idx([z, y, x])]) {
                            touches_hot = true;
                            break 'scan;
                        }
                    }
                }
            }
            if touches_hot {
                continue;
            }
            let level = rng.range(10.0, 16.0) * spec.noise_sigma;
            for &v in &voxels {
                lesion_map[idx(v)] = i as u32 + 1;
            }
            lesions.push((voxels, grown, level));
            placed = true;
            break;
        }
        if !placed {
            return Err(PhantomError::Infeasible {
                lesion: i,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    let (b, s) = (spec.background, spec.noise_sigma);
    let mut pet = vec![0.0; n];
    for (i, p) in pet.iter_mut().enumerate() {
        let base = if lesion_map[i] != 0 {
            b + lesions[lesion_map[i] as usize - 1].2
        } else if spec.is_hot(anatomy[i]) {
            b + 16.0 * s
        } else if anatomy[i] != 0 {
            b + 0.5 * s
        } else {
            b
        };
        *p = base + s * clipped_noise(&mut rng);
    }
    let mut ct = vec![0.0; n];
    for (i, c) in ct.iter_mut().enumerate() {
        let base = match anatomy[i] {
            0 => 0.0,
            l => 20.0 + l as f64,
        };
        *c = base + 10.0 * clipped_noise(&mut rng);
    }

    let gt_boxes = lesions
        .iter()
        .map(|(v, _, _)| {
            let [lo, hi] = tight_box(v).expect("placed lesions are non-empty");
            Box3::new(lo.map(|x| x as f64), hi.map(|x| x as f64))
        })
        .collect::<Result<_, _>>()?;
    Ok(Phantom {
        pet: Volume::single(geometry, PET_CHANNEL, pet)?,
        ct: Volume::single(geometry, CT_CHANNEL, ct)?,
        anatomy: LabelMask::new(geometry, anatomy)?,
        lesions: LabelMask::new(geometry, lesion_map)?,
        gt_boxes,
    })
}

/// Threshold detector: 26-connected components of voxels with PET above
/// `threshold`, optionally excluding voxels whose anatomy label is in
/// `hot_labels`. Each component becomes a detection of its tight box scored
/// by its mean PET value.
pub fn threshold_detector(
    pet: &Volume,
    anatomy: Option<&LabelMask>,
    hot_labels: &[u32],
    threshold: f64,
    case_id: &str,
) -> Result<Vec<Detection>, PhantomError> {
    let values = match pet.channels() {
        [c] => &c.data,
        other => return Err(VolumeError::ChannelCount(other.len()).into()),
    };
    if let Some(a) = anatomy {
        if a.shape() != pet.shape() {
            return Err(VolumeError::ShapeMismatch(pet.shape(), a.shape()).into());
        }
    }
    let fg: Vec<u32> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let hot = anatomy.is_some_and(|a| hot_labels.contains(&a.labels()[i]) && a.labels()[i] != 0);
            u32::from(v > threshold && !hot)
        })
        .collect();
    let mask = LabelMask::new(*pet.geometry(), fg)?;
    let set = connected_components(&mask, |l| l == 1);
    let mut sums = vec![0.0; set.len()];
    for (i, &id) in set.instance_map.iter().enumerate() {
        if id != 0 {
            sums[id as usize - 1] += values[i];
        }
    }
    Ok(set
        .instances
        .iter()
        .map(|inst| {
            let score = sums[inst.id as usize - 1] / inst.voxel_count as f64;
            Detection::new(case_id, inst.bounding_box, score, LESION_LABEL)
        })
        .collect())
}

/// One case entry of a dataset manifest; paths are relative to the dataset
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCase {
    pub id: String,
    pub pet: String,
    pub ct: String,
    pub anatomy: String,
    pub lesions: String,
}

/// `dataset.json` of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cases: Vec<DatasetCase>,
    pub background: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub hot_labels: Vec<u32>,
}

pub const MANIFEST_FILE: &str = "dataset.json";
pub const GT_FILE: &str = "gt.json";

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self, PhantomError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A loaded case of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub pet: Volume,
    pub ct: Volume,
    pub anatomy: LabelMask,
    pub lesions: LabelMask,
}

fn load_volume(path: &Path) -> Result<Volume, PhantomError> {
    load_raw(path, GridKind::Volume)?
        .into_volume()
        .ok_or_else(|| PhantomError::InvalidSpec(format!("{} is not a volume", path.display())))
}

fn load_mask(path: &Path) -> Result<LabelMask, PhantomError> {
    load_raw(path, GridKind::Mask)?
        .into_mask()
        .ok_or_else(|| PhantomError::InvalidSpec(format!("{} is not a mask", path.display())))
}

impl DatasetCase {
    pub fn load(&self, dir: &Path) -> Result<DatasetItem, PhantomError> {
        Ok(DatasetItem {
            id: self.id.clone(),
            pet: load_volume(&dir.join(&self.pet))?,
            ct: load_volume(&dir.join(&self.ct))?,
            anatomy: load_mask(&dir.join(&self.anatomy))?,
            lesions: load_mask(&dir.join(&self.lesions))?,
        })
    }

    pub fn load_lesions(&self, dir: &Path) -> Result<LabelMask, PhantomError> {
        load_mask(&dir.join(&self.lesions))
    }
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:03}")
}

/// Generate `n_cases` phantoms into `dir`. Case `i` uses sub-stream `i` of
/// `spec.seed`. Writes one directory per case (RAW+JSON volumes), the
/// manifest and the ground-truth detection JSON; returns the manifest path.
pub fn write_dataset(dir: &Path, spec: &PhantomSpec, n_cases: usize) -> Result<PathBuf, PhantomError> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut cases = Vec::with_capacity(n_cases);
    let mut gt = Vec::new();
    for i in 0..n_cases {
        let id = case_id(i);
        let case_spec = PhantomSpec {
            seed: DetRng::substream_seed(spec.seed, i as u64),
            ..spec.clone()
        };
        let p = generate(&case_spec)?;
        std::fs::create_dir_all(dir.join(&id))?;
        let rel = |name: &str| format!("{id}/{name}.json");
        save_raw_volume(&p.pet, &dir.join(rel("pet")))?;
        save_raw_volume(&p.ct, &dir.join(rel("ct")))?;
        save_raw_mask(&p.anatomy, &dir.join(rel("anatomy")))?;
        save_raw_mask(&p.lesions, &dir.join(rel("lesions")))?;
        gt.extend(p.gt_boxes.iter().map(|b| Detection::new(id.clone(), *b, 1.0, LESION_LABEL)));
        cases.push(DatasetCase {
            pet: rel("pet"),
            ct: rel("ct"),
            anatomy: rel("anatomy"),
            lesions: rel("lesions"),
            id,
        });
    }
    let manifest = DatasetManifest {
        cases,
        background: spec.background,
        sigma: spec.noise_sigma,
        threshold: spec.threshold(),
        hot_labels: spec.hot_organ_labels.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    crate::geometry::write_detections(&dir.join(GT_FILE), &gt)?;
    Ok(path)
}
