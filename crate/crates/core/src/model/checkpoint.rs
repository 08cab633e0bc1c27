//! Checkpoint directory: `manifest.json` lists `{name, shape, dtype,
//! byte_offset}` per tensor; `params.bin` is the concatenation of every
//! tensor's little-endian `f64` values in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Result, XcbError};
use crate::numerics::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "xcb-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model: ModelConfig,
    /// Free-form provenance (resolved run config, seed, variant).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(dir: &Path, config: &ModelConfig, params: &ModelParams, meta: &serde_json::Value) -> Result<()> {
    params.check_against(config)?;
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(params.n_scalars() * 8);
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            byte_offset: blob.len(),
        });
        blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        model: config.clone(),
        meta: meta.clone(),
        tensors,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(XcbError::Config(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    manifest.model.validate()?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let mut map = BTreeMap::new();
    for e in &manifest.tensors {
        if e.dtype != "f64" {
            return Err(XcbError::Config(format!("tensor {} has dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.byte_offset + n * 8;
        let bytes = blob
            .get(e.byte_offset..end)
            .ok_or_else(|| XcbError::Config(format!("tensor {} runs past the blob end", e.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        map.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    let params = ModelParams::from_map(map);
    params.check_against(&manifest.model)?;
    Ok(Checkpoint {
        config: manifest.model,
        params,
        meta: manifest.meta,
    })
}
