//! Named tensor container and its on-disk form, "NTWS v1".
//!
//! A manifest JSON file
//!
//! ```json
//! {"tensors": [{"name": "fpn.out0.weight", "shape": [8, 8, 3, 3, 3], "dtype": "f32", "offset": 0}],
//!  "blob": "weights.bin"}
//! ```
//!
//! points at a sidecar blob of little-endian f32 values, row-major, each
//! tensor starting at its byte `offset`. Tensors must not overlap and must
//! exactly cover the blob. An optional `"model"` key carries the architecture
//! description used to build the network that consumes the tensors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

/// Immutable-after-load set of named f32 tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    model: Option<serde_json::Value>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn model(&self) -> Option<&serde_json::Value> {
        self.model.as_ref()
    }

    pub fn set_model(&mut self, model: Option<serde_json::Value>) {
        self.model = model;
    }

    /// Add a tensor; values are stored as f32.
    pub fn insert(&mut self, name: &str, tensor: &Tensor) -> Result<(), NnError> {
        self.insert_raw(
            name,
            tensor.shape().to_vec(),
            tensor.data().iter().map(|&v| v as f32).collect(),
        )
    }

    fn insert_raw(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<(), NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::NameCollision(name.to_string()));
        }
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Shape(format!("tensor '{name}': bad shape {shape:?}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn shape_of(&self, name: &str) -> Option<&[usize]> {
        self.index.get(name).map(|&i| self.entries[i].shape.as_slice())
    }

    pub fn get(&self, name: &str) -> Result<Tensor, NnError> {
        let e = &self.entries[*self
            .index
            .get(name)
            .ok_or_else(|| NnError::MissingTensor(name.to_string()))?];
        Tensor::new(e.shape.clone(), e.data.iter().map(|&v| v as f64).collect())
    }

    /// Fetch a tensor and check its shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<Tensor, NnError> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(NnError::Shape(format!(
                "tensor '{name}': expected shape {shape:?}, stored {:?}",
                t.shape()
            )));
        }
        Ok(t)
    }
}

/// Write `store` to `manifest_path` with the blob alongside as `<stem>.bin`.
pub fn save_weights(store: &WeightStore, manifest_path: &Path) -> Result<(), NnError> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| NnError::Format(format!("bad manifest path {}", manifest_path.display())))?;
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(store.entries.len());
    for e in &store.entries {
        tensors.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            dtype: "f32".into(),
            offset: blob.len(),
        });
        for v in &e.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    std::fs::write(dir.join(&blob_name), blob)?;
    let manifest = Manifest {
        tensors,
        blob: blob_name,
        model: store.model.clone(),
    };
    std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_weights(manifest_path: &Path) -> Result<WeightStore, NnError> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let blob = std::fs::read(dir.join(&manifest.blob))?;

    let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(NnError::Format(format!(
                "tensor '{}': unknown dtype '{}'",
                t.name, t.dtype
            )));
        }
        let bytes = t.shape.iter().product::<usize>() * 4;
        spans.push((t.offset, t.offset + bytes, &t.name));
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(NnError::Format(format!(
                "tensor '{}' overlaps tensor '{}'",
                pair[1].2, pair[0].2
            )));
        }
    }
    let total: usize = spans.iter().map(|s| s.1 - s.0).sum();
    if total != blob.len() || spans.last().is_some_and(|s| s.1 > blob.len()) {
        return Err(NnError::Format(format!(
            "blob has {} bytes, manifest describes {total}",
            blob.len()
        )));
    }

    let mut store = WeightStore::new();
    for t in manifest.tensors {
        let n: usize = t.shape.iter().product();
        let data = blob[t.offset..t.offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert_raw(&t.name, t.shape, data)?;
    }
    store.model = manifest.model;
    Ok(store)
}
