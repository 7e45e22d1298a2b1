//! Checkpoint directory: `manifest.json` plus `params.bin` holding every
//! parameter as little-endian f64 in store order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GsanError, Result};

use super::model::{Model, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub max_order: usize,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &Model, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors = model
        .store
        .iter()
        .map(|(name, m)| TensorEntry {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        max_order: model.max_order,
        seed,
        tensors,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let bytes: Vec<u8> = model.store.flatten().iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(dir.join("params.bin"), bytes)?;
    Ok(())
}

/// Rebuilds the model from its config and overwrites every parameter.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, Manifest)> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(GsanError::IncompatibleCheckpoint(format!(
            "format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut model = Model::init(&manifest.config, manifest.max_order, manifest.seed)?;
    let expected: Vec<TensorEntry> = model
        .store
        .iter()
        .map(|(name, m)| TensorEntry {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
        })
        .collect();
    if expected != manifest.tensors {
        return Err(GsanError::IncompatibleCheckpoint(
            "tensor names or shapes differ from the config".into(),
        ));
    }
    let bytes = fs::read(dir.join("params.bin"))?;
    if bytes.len() != 8 * model.store.total_size() {
        return Err(GsanError::IncompatibleCheckpoint(format!(
            "params.bin holds {} bytes, expected {}",
            bytes.len(),
            8 * model.store.total_size()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    model.store.assign_flat(&flat)?;
    Ok((model, manifest))
}
