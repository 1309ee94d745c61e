//! Checkpoints: a JSON manifest plus a flat little-endian `f64` blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InputDims, M3E2Config, M3E2Params};
use crate::engine::{Params, Tensor};
use crate::error::{Error, Result};

const FORMAT: &str = "m3e2-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset in `f64` elements from the start of the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: M3E2Config,
    pub dims: InputDims,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>` with extension `bin` (values).
/// Returns the blob path.
pub fn save_checkpoint(model: &M3E2Params, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let mut tensors = Vec::with_capacity(model.params().len());
    let mut blob = Vec::with_capacity(model.num_parameters() * 8);
    let mut offset = 0;
    for (name, t) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        config: model.config().clone(),
        dims: model.dims(),
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    let bin = blob_path(path);
    std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    Ok(bin)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<M3E2Params> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if manifest.format != FORMAT {
        return Err(bad(format!(
            "unknown checkpoint format `{}`",
            manifest.format
        )));
    }
    let bin = blob_path(path);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(bad(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut params = Params::new();
    for e in &manifest.tensors {
        let end = e.offset + e.rows * e.cols;
        if end > values.len() {
            return Err(bad(format!(
                "tensor `{}` runs past the end of the blob",
                e.name
            )));
        }
        params.insert(
            e.name.clone(),
            Tensor::new(e.rows, e.cols, values[e.offset..end].to_vec())?,
        );
    }
    M3E2Params::from_parts(manifest.config, manifest.dims, params)
}
