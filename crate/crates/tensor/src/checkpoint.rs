//! Checkpoint layout: a JSON manifest naming every tensor with its shape and
//! byte range, plus one little-endian `f32` blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Byte length.
    pub nbytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
}

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in store.named() {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        tensors.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            nbytes: blob.len() - offset,
        });
    }
    (Manifest { tensors }, blob)
}

pub fn decode<T: Scalar>(manifest: &Manifest, blob: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    manifest
        .tensors
        .iter()
        .map(|e| {
            if e.dtype != "f32" {
                return Err(TensorError::CheckpointMismatch(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let numel: usize = e.shape.iter().product();
            if e.nbytes != numel * 4 || e.offset + e.nbytes > blob.len() {
                return Err(TensorError::CheckpointMismatch(format!("{}: byte range disagrees with shape", e.name)));
            }
            let data = blob[e.offset..e.offset + e.nbytes]
                .chunks_exact(4)
                .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            Ok((e.name.clone(), Tensor::from_vec(&e.shape, data)?))
        })
        .collect()
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save<T: Scalar>(store: &ParamStore<T>, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let (manifest, blob) = encode(store);
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(blob_path, blob)?;
    Ok(())
}

pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let blob = fs::read(blob_path)?;
    store.load_named(&decode(&manifest, &blob)?)
}
