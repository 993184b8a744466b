//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a JSON object whose keys are the
//! subcommand's long flag names (`{"min-score": 0.6, "jobs": 2}`); flags
//! given on the command line take precedence.
//!
//! Exit codes: 0 success, 1 runtime failure (for example an unwritable
//! output), 2 usage error, 3 malformed or unreadable input file, 4 shape or
//! configuration violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::eval::{build_report, markdown_table, EvalConfig, EvalError, GroundTruth, MetricsReport};
use crate::geometry::{filter_detections, read_detections, write_detections, Detection, GeometryError, LESION_LABEL};
use crate::model::{config_from_store, init_weights, EncoderKind, Model, ModelConfig, ModelError, PostprocConfig, WeightInit};
use crate::nn::{load_weights, save_weights, NnError, Tensor};
use crate::phantom::{threshold_detector, write_dataset, DatasetManifest, PhantomError, PhantomSpec, MANIFEST_FILE};
use crate::ssl::{make_views, CorruptionConfig, SslError};
use crate::volume::{
    connected_components, fuse_channels, load_nifti, load_raw, resample_nearest, save_raw_volume, Channel, Grid,
    GridKind, LabelMask, Volume, VolumeError,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Input(_) => 3,
            CliError::Config(_) => 4,
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("cannot write {}: {e}", path.display()))
    }

    fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Runtime(m) => CliError::Runtime(format!("{p}: {m}")),
            CliError::Input(m) => CliError::Input(format!("{p}: {m}")),
            CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
        }
    }
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::Geometry(_)
            | VolumeError::ChannelSize { .. }
            | VolumeError::DuplicateChannel(_)
            | VolumeError::ShapeMismatch(..)
            | VolumeError::ChannelCount(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Io(_) | GeometryError::Json(_) | GeometryError::NonFinite => CliError::Input(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Format(_) | NnError::Io(_) | NnError::Json(_) => CliError::Input(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Nn(n) => n.into(),
            ModelError::Geometry(g) => g.into(),
            ModelError::Description(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::InvalidSpec(_) | PhantomError::Infeasible { .. } => CliError::Config(e.to_string()),
            PhantomError::Volume(v) => v.into(),
            PhantomError::Geometry(g) => g.into(),
            PhantomError::Io(_) | PhantomError::Json(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Geometry(g) => g.into(),
            EvalError::Phantom(p) => p.into(),
            EvalError::Io(_) | EvalError::Json(_) => CliError::Input(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SslError> for CliError {
    fn from(e: SslError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderArg {
    Swin,
    Conv,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Swin => EncoderKind::Swin,
            EncoderArg::Conv => EncoderKind::Conv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    /// Connected components of the lesion masks.
    Lesions,
    /// Threshold detector on PET.
    Pet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Zero,
    Random,
}

#[derive(Debug, Parser)]
#[command(name = "lesiondet", version, about = "3D PET/CT lesion detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known lesions.
    Phantom(PhantomArgs),
    /// Build two independently corrupted views of a volume.
    Corrupt(CorruptArgs),
    /// Extract detection boxes from masks or by thresholding PET.
    MaskToBoxes(MaskToBoxesArgs),
    /// Stack PET, CT and optionally an anatomy mask into one volume.
    Fuse(FuseArgs),
    /// Run the detector.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Side-by-side table of several evaluation reports.
    Compare(CompareArgs),
    /// Write a zero or seeded-random weight file for a model configuration.
    InitWeights(InitWeightsArgs),
}

/// Fill every `None` field of `$a` from `$b`.
macro_rules! merge_fields {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )*
    };
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required --{flag}")))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let n = jobs.unwrap_or(1);
    if n == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))
}

fn write_dets(path: &Path, dets: &[Detection]) -> Result<(), CliError> {
    write_detections(path, dets).map_err(|e| CliError::output(path, e))
}

fn load_grid(path: &Path, kind: GridKind) -> Result<Grid, CliError> {
    let name = path.to_string_lossy();
    let grid = if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        load_nifti(path, kind)
    } else {
        load_raw(path, kind)
    };
    grid.map_err(|e| CliError::from(e).at(path))
}

fn load_volume(path: &Path) -> Result<Volume, CliError> {
    load_grid(path, GridKind::Volume)?
        .into_volume()
        .ok_or_else(|| CliError::Input(format!("{} is not a volume", path.display())))
}

fn load_mask(path: &Path) -> Result<LabelMask, CliError> {
    load_grid(path, GridKind::Mask)?
        .into_mask()
        .ok_or_else(|| CliError::Input(format!("{} is not a label mask", path.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "case".into())
}

fn shape3(v: &[usize], flag: &str) -> Result<[usize; 3], CliError> {
    match *v {
        [n] => Ok([n; 3]),
        [d, h, w] => Ok([d, h, w]),
        _ => Err(CliError::Config(format!("--{flag} takes 1 or 3 comma-separated values"))),
    }
}

fn pair<T: Copy>(v: &[T], flag: &str) -> Result<[T; 2], CliError> {
    match *v {
        [a, b] => Ok([a, b]),
        _ => Err(CliError::Config(format!("--{flag} takes two comma-separated values"))),
    }
}

fn read_dets(path: &Path) -> Result<Vec<Detection>, CliError> {
    read_detections(path).map_err(|e| CliError::from(e).at(path))
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(dir).map_err(|e| CliError::from(e).at(dir))
}

/// Refuse to write an output over one of the inputs.
fn distinct_output(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    match canon(out) {
        Some(o) if inputs.iter().any(|i| canon(i).as_ref() == Some(&o)) => Err(CliError::Config(format!(
            "output {} would overwrite an input",
            out.display()
        ))),
        _ => Ok(()),
    }
}

fn is_dataset(path: &Path) -> bool {
    path.is_dir() && path.join(MANIFEST_FILE).is_file()
}

// ---------------------------------------------------------------- phantom

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhantomArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of cases.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Grid shape, `N` or `D,H,W`.
    #[arg(long, value_delimiter = ',')]
    pub shape: Option<Vec<usize>>,
    /// Lesions per case.
    #[arg(long)]
    pub lesions: Option<usize>,
    /// Organs per case.
    #[arg(long)]
    pub organs: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_phantom(mut a: PhantomArgs) -> Result<(), CliError> {
    let c: PhantomArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; out, seed, cases, shape, lesions, organs);
    let out = required(a.out, "out")?;
    let defaults = PhantomSpec::default();
    let spec = PhantomSpec {
        shape: match &a.shape {
            Some(s) => shape3(s, "shape")?,
            None => defaults.shape,
        },
        seed: a.seed.unwrap_or(0),
        n_lesions: a.lesions.unwrap_or(defaults.n_lesions),
        n_organs: a.organs.unwrap_or(defaults.n_organs),
        ..defaults
    };
    spec.validate()?;
    write_dataset(&out, &spec, a.cases.unwrap_or(4)).map_err(|e| match e {
        PhantomError::Io(e) => CliError::output(&out, e),
        PhantomError::Volume(VolumeError::Io(e)) => CliError::output(&out, e),
        other => other.into(),
    })?;
    Ok(())
}

// ---------------------------------------------------------------- corrupt

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CorruptArgs {
    /// Input volume (RAW+JSON header or NIfTI).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory for `view1.json` and `view2.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corruption regions per transform.
    #[arg(long)]
    pub regions: Option<usize>,
    /// Region edge range in voxels, `MIN,MAX`.
    #[arg(long, value_delimiter = ',')]
    pub region_size: Option<Vec<usize>>,
    /// Probability of the keep-regions dropout variant.
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_corrupt(mut a: CorruptArgs) -> Result<(), CliError> {
    let c: CorruptArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; input, out, seed, regions, region_size, keep_prob);
    let input = required(a.input, "input")?;
    let out = required(a.out, "out")?;
    let defaults = CorruptionConfig::default();
    let params = CorruptionConfig {
        n_regions: a.regions.unwrap_or(defaults.n_regions),
        region_size_range: match &a.region_size {
            Some(v) => pair(v, "region-size")?,
            None => defaults.region_size_range,
        },
        keep_mode_prob: a.keep_prob.unwrap_or(defaults.keep_mode_prob),
        ..defaults
    };
    params.validate()?;
    let vol = load_volume(&input)?;
    let [d, h, w] = vol.shape();
    let patch = Tensor::new(vec![vol.num_channels(), d, h, w], vol.to_flat())?;
    let (v1, v2) = make_views(&patch, a.seed.unwrap_or(0), &params)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::output(&out, e))?;
    let n = d * h * w;
    for (name, view) in [("view1.json", v1), ("view2.json", v2)] {
        let channels = vol
            .channels()
            .iter()
            .zip(view.data().chunks_exact(n))
            .map(|(ch, data)| Channel {
                name: ch.name.clone(),
                data: data.to_vec(),
            })
            .collect();
        let path = out.join(name);
        save_raw_volume(&Volume::new(*vol.geometry(), channels)?, &path).map_err(|e| CliError::output(&path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------- mask-to-boxes

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MaskToBoxesArgs {
    /// Dataset directory, or a single mask file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output detection JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Box source for dataset input.
    #[arg(long, value_enum)]
    pub source: Option<BoxSource>,
    /// With `--source pet`: exclude hot-organ voxels using the anatomy mask.
    #[arg(long, value_enum)]
    pub anatomy: Option<Switch>,
    /// With `--source pet`: override the dataset's PET threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Minimum box volume in voxels.
    #[arg(long)]
    pub min_size: Option<f64>,
    /// Case id for single-mask input (default: file stem).
    #[arg(long)]
    pub case_id: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_mask_to_boxes(mut a: MaskToBoxesArgs) -> Result<(), CliError> {
    let c: MaskToBoxesArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; input, out, source, anatomy, threshold, min_size, case_id, jobs);
    let input = required(a.input, "input")?;
    let out = required(a.out, "out")?;
    let source = a.source.unwrap_or(BoxSource::Lesions);
    let mask_boxes = |mask: &LabelMask, id: &str| -> Vec<Detection> {
        connected_components(mask, |l| l > 0)
            .boxes()
            .into_iter()
            .map(|b| Detection::new(id, b, 1.0, LESION_LABEL))
            .collect()
    };
    let dets: Vec<Detection> = if is_dataset(&input) {
        let manifest = load_manifest(&input)?;
        let threshold = a.threshold.unwrap_or(manifest.threshold);
        let use_anatomy = a.anatomy.unwrap_or(Switch::On).on();
        let pool = thread_pool(a.jobs)?;
        let per_case: Vec<Result<Vec<Detection>, CliError>> = pool.install(|| {
            manifest
                .cases
                .par_iter()
                .map(|case| -> Result<Vec<Detection>, CliError> {
                    match source {
                        BoxSource::Lesions => Ok(mask_boxes(&case.load_lesions(&input)?, &case.id)),
                        BoxSource::Pet => {
                            let item = case.load(&input)?;
                            let anatomy = use_anatomy.then_some(&item.anatomy);
                            Ok(threshold_detector(&item.pet, anatomy, &manifest.hot_labels, threshold, &case.id)?)
                        }
                    }
                })
                .collect()
        });
        per_case.into_iter().collect::<Result<Vec<_>, _>>()?.concat()
    } else {
        if source != BoxSource::Lesions {
            return Err(CliError::Config("--source pet needs a dataset directory as --input".into()));
        }
        let id = a.case_id.clone().unwrap_or_else(|| file_stem(&input));
        mask_boxes(&load_mask(&input)?, &id)
    };
    let dets = filter_detections(&dets, f64::NEG_INFINITY, a.min_size.unwrap_or(0.0));
    write_dets(&out, &dets)
}

// ------------------------------------------------------------------- fuse

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FuseArgs {
    #[arg(long)]
    pub pet: Option<PathBuf>,
    #[arg(long)]
    pub ct: Option<PathBuf>,
    /// Anatomy label mask; resampled onto the PET grid when the grids differ.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Add the anatomy channel (requires `--mask`).
    #[arg(long, value_enum)]
    pub anatomy: Option<Switch>,
    /// Output RAW+JSON header path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_fuse(mut a: FuseArgs) -> Result<(), CliError> {
    let c: FuseArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; pet, ct, mask, anatomy, out);
    let pet = load_volume(&required(a.pet, "pet")?)?;
    let ct = load_volume(&required(a.ct, "ct")?)?;
    let out = required(a.out, "out")?;
    let anatomy = match (a.anatomy.unwrap_or(Switch::Off), &a.mask) {
        (Switch::Off, _) => None,
        (Switch::On, None) => return Err(CliError::Config("--anatomy on needs --mask".into())),
        (Switch::On, Some(p)) => {
            let m = load_mask(p)?;
            Some(if m.geometry() == pet.geometry() {
                m
            } else {
                resample_nearest(&m, pet.geometry())
            })
        }
    };
    let fused = fuse_channels(&pet, &ct, anatomy.as_ref())?;
    save_raw_volume(&fused, &out).map_err(|e| CliError::output(&out, e))
}

// ----------------------------------------------------------------- detect

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DetectArgs {
    /// Dataset directory, or a fused volume file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Weight manifest.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Encoder, when the weight file does not describe the model.
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Use the anatomy channel.
    #[arg(long, value_enum)]
    pub anatomy: Option<Switch>,
    #[arg(long)]
    pub min_score: Option<f64>,
    /// Minimum box volume in voxels.
    #[arg(long)]
    pub min_size: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Candidates kept by score before NMS.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Case id for single-volume input (default: file stem).
    #[arg(long)]
    pub case_id: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output detection JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn check_unit_interval(v: f64, flag: &str) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Config(format!("--{flag} {v} outside [0, 1]")))
    }
}

fn run_detect(mut a: DetectArgs) -> Result<(), CliError> {
    let c: DetectArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; input, weights, encoder, anatomy, min_score, min_size, nms_iou, top_k, case_id, jobs, out);
    let input = required(a.input, "input")?;
    let out = required(a.out, "out")?;
    let weights = required(a.weights, "weights")?;
    let store = load_weights(&weights).map_err(|e| CliError::from(e).at(&weights))?;
    let defaults = PostprocConfig::default();
    let post = PostprocConfig {
        min_score: check_unit_interval(a.min_score.unwrap_or(defaults.min_score), "min-score")?,
        min_volume: a.min_size.unwrap_or(defaults.min_volume),
        nms_iou: check_unit_interval(a.nms_iou.unwrap_or(defaults.nms_iou), "nms-iou")?,
        pre_nms_top_k: a.top_k.unwrap_or(defaults.pre_nms_top_k),
    };

    let mut fallback = ModelConfig::default();
    if let Some(e) = a.encoder {
        fallback.encoder = e.into();
    }
    if let Some(s) = a.anatomy {
        fallback.in_channels = if s.on() { 3 } else { 2 };
    }
    let cfg = config_from_store(&store, &fallback)?;
    if let Some(e) = a.encoder {
        if cfg.encoder != EncoderKind::from(e) {
            let name = e.to_possible_value().map(|v| v.get_name().to_owned()).unwrap_or_default();
            return Err(CliError::Config(format!("--encoder {name} disagrees with the weight file")));
        }
    }
    let use_anatomy = match a.anatomy {
        Some(s) => s.on(),
        None => cfg.in_channels == 3,
    };
    if cfg.in_channels != if use_anatomy { 3 } else { 2 } {
        return Err(CliError::Config(format!(
            "model takes {} input channels, anatomy is {}",
            cfg.in_channels,
            if use_anatomy { "on" } else { "off" }
        )));
    }
    let model = Model::load(&cfg, &store)?;
    let pool = thread_pool(a.jobs)?;

    let dets = if is_dataset(&input) {
        let manifest = load_manifest(&input)?;
        let per_case: Vec<Result<Vec<Detection>, CliError>> = pool.install(|| {
            manifest
                .cases
                .par_iter()
                .map(|case| -> Result<Vec<Detection>, CliError> {
                    let item = case.load(&input)?;
                    let fused = fuse_channels(&item.pet, &item.ct, use_anatomy.then_some(&item.anatomy))?;
                    Ok(model.infer(&fused, &case.id, &post)?)
                })
                .collect()
        });
        per_case.into_iter().collect::<Result<Vec<_>, _>>()?.concat()
    } else {
        let vol = load_volume(&input)?;
        let vol = if vol.num_channels() == 3 && !use_anatomy {
            Volume::new(*vol.geometry(), vol.channels()[..2].to_vec())?
        } else {
            vol
        };
        let id = a.case_id.clone().unwrap_or_else(|| file_stem(&input));
        pool.install(|| model.infer(&vol, &id, &post))?
    };
    write_dets(&out, &dets)
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// Predicted detections (JSON).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground truth: detection JSON or dataset directory.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// IoU thresholds of the FROC and AP columns, `LO,HI`.
    #[arg(long, value_delimiter = ',')]
    pub iou: Option<Vec<f64>>,
    /// Ignore predictions scored below this.
    #[arg(long)]
    pub min_score: Option<f64>,
    /// Ignore predictions smaller than this many voxels.
    #[arg(long)]
    pub min_size: Option<f64>,
    /// Experiment name for the table row (default: prediction file stem).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Report JSON; the markdown table is written next to it as `.md`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_evaluate(mut a: EvaluateArgs) -> Result<String, CliError> {
    let c: EvaluateArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; pred, gt, iou, min_score, min_size, name, jobs, out);
    let pred_path = required(a.pred, "pred")?;
    let preds = read_dets(&pred_path)?;
    let preds = filter_detections(&preds, a.min_score.unwrap_or(f64::NEG_INFINITY), a.min_size.unwrap_or(0.0));
    let mut cfg = EvalConfig::default();
    if let Some(v) = &a.iou {
        let [lo, hi] = pair(v, "iou")?;
        for t in [lo, hi] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(CliError::Config(format!("--iou threshold {t} outside (0, 1]")));
            }
        }
        cfg.headline_iou = [lo, hi];
    }
    let pool = thread_pool(a.jobs)?;
    let gt_path = required(a.gt, "gt")?;
    let gt = pool.install(|| load_ground_truth(&gt_path))?;
    let name = a.name.clone().unwrap_or_else(|| file_stem(&pred_path));
    let report = build_report(&preds, &gt, &cfg, &name)?;
    let table = markdown_table(std::slice::from_ref(&report))?;
    if let Some(out) = &a.out {
        let md = out.with_extension("md");
        for o in [out.as_path(), md.as_path()] {
            distinct_output(o, &[&pred_path, &gt_path])?;
        }
        write_json(out, &report)?;
        std::fs::write(&md, &table).map_err(|e| CliError::output(&md, e))?;
    }
    Ok(table)
}

/// Like [`GroundTruth::load`], reading dataset cases in parallel.
fn load_ground_truth(path: &Path) -> Result<GroundTruth, CliError> {
    if !is_dataset(path) {
        return GroundTruth::load(path).map_err(|e| CliError::from(e).at(path));
    }
    let manifest = load_manifest(path)?;
    let boxes: Vec<Result<_, CliError>> = manifest
        .cases
        .par_iter()
        .map(|c| Ok((c.id.clone(), connected_components(&c.load_lesions(path)?, |l| l > 0).boxes())))
        .collect();
    Ok(GroundTruth {
        cases: boxes.into_iter().collect::<Result<_, _>>()?,
    })
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CompareArgs {
    /// Report JSON files from `evaluate`, at least two.
    #[arg(num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Markdown output (default: stdout only).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_compare(mut a: CompareArgs) -> Result<String, CliError> {
    let c: CompareArgs = read_config(a.config.as_deref())?;
    if a.reports.is_empty() {
        a.reports = c.reports;
    }
    merge_fields!(a, c; out);
    if a.reports.len() < 2 {
        return Err(CliError::Config("compare needs at least two reports".into()));
    }
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<MetricsReport>(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = markdown_table(&reports)?;
    if let Some(out) = &a.out {
        let inputs: Vec<&Path> = a.reports.iter().map(PathBuf::as_path).collect();
        distinct_output(out, &inputs)?;
        std::fs::write(out, &table).map_err(|e| CliError::output(out, e))?;
    }
    Ok(table)
}

// ----------------------------------------------------------- init-weights

#[derive(Debug, Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct InitWeightsArgs {
    /// Model configuration JSON (default: built-in defaults).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Three input channels (on) or two (off).
    #[arg(long, value_enum)]
    pub anatomy: Option<Switch>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Include the reconstruction head.
    #[arg(long)]
    pub ssl: Option<bool>,
    /// Output weight manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn run_init_weights(mut a: InitWeightsArgs) -> Result<(), CliError> {
    let c: InitWeightsArgs = read_config(a.config.as_deref())?;
    merge_fields!(a, c; model, encoder, anatomy, init, seed, ssl, out);
    let out = required(a.out, "out")?;
    let mut cfg: ModelConfig = read_config(a.model.as_deref())?;
    if let Some(e) = a.encoder {
        cfg.encoder = e.into();
    }
    if let Some(s) = a.anatomy {
        cfg.in_channels = if s.on() { 3 } else { 2 };
    }
    let init = match a.init.unwrap_or(InitArg::Zero) {
        InitArg::Zero => WeightInit::Zero,
        InitArg::Random => WeightInit::Random { seed: a.seed.unwrap_or(0) },
    };
    let store = init_weights(&cfg, init, a.ssl.unwrap_or(false))?;
    save_weights(&store, &out).map_err(|e| CliError::output(&out, e))
}

pub fn run(cli: Cli) -> Result<Option<String>, CliError> {
    match cli.command {
        Command::Phantom(a) => run_phantom(a).map(|_| None),
        Command::Corrupt(a) => run_corrupt(a).map(|_| None),
        Command::MaskToBoxes(a) => run_mask_to_boxes(a).map(|_| None),
        Command::Fuse(a) => run_fuse(a).map(|_| None),
        Command::Detect(a) => run_detect(a).map(|_| None),
        Command::Evaluate(a) => run_evaluate(a).map(Some),
        Command::Compare(a) => run_compare(a).map(Some),
        Command::InitWeights(a) => run_init_weights(a).map(|_| None),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(Some(text)) => {
            print!("{text}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
