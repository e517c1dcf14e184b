//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8    magic  b"MICLCKPT"
//! bytes 8..16   u64    length H of the JSON header
//! bytes 16..16+H       JSON header (CheckpointHeader)
//! remainder            raw parameter data, tensors back to back in header order
//! ```
//!
//! Each tensor entry carries its name, shape and byte offset into the data
//! section. Values are written as their IEEE-754 bit patterns, so a save/load
//! round trip is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{reset_parameters, ModelConfig, ModelError, ParameterSet, Real};

const MAGIC: &[u8; 8] = b"MICLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    params: &ParameterSet<T>,
    model: &ModelConfig,
    seed: u64,
    epoch: usize,
) -> Result<(), ModelError> {
    let width = std::mem::size_of::<T>();
    let mut offset = 0;
    let mut data = Vec::with_capacity(params.num_parameters() * width);
    let tensors = params
        .tensors()
        .into_iter()
        .map(|t| {
            let entry = TensorEntry {
                name: t.name,
                shape: t.shape,
                offset,
            };
            data.extend(T::to_le_bytes_vec(t.data));
            offset += std::mem::size_of_val(t.data);
            entry
        })
        .collect();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.to_string(),
        model: model.clone(),
        seed,
        epoch,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    file.write_all(MAGIC)?;
    file.write_all(&(json.len() as u64).to_le_bytes())?;
    file.write_all(&json)?;
    file.write_all(&data)?;
    file.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(
    path: &Path,
) -> Result<(CheckpointHeader, ParameterSet<T>), ModelError> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| ModelError::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| bad(&format!("malformed header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    if header.dtype != T::DTYPE {
        return Err(bad(&format!(
            "stored as {}, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let data = &bytes[data_start..];
    let width = std::mem::size_of::<T>();

    let mut params = reset_parameters::<T>(&header.model, 0)?;
    let targets = params.tensors_mut();
    if targets.len() != header.tensors.len() {
        return Err(bad("tensor count does not match the model config"));
    }
    for (target, entry) in targets.into_iter().zip(&header.tensors) {
        if target.name != entry.name || target.shape != entry.shape {
            return Err(bad(&format!("unexpected tensor {}", entry.name)));
        }
        let end = entry.offset + std::mem::size_of_val(target.data);
        let raw = data
            .get(entry.offset..end)
            .ok_or_else(|| bad(&format!("tensor {} runs past end of file", entry.name)))?;
        for (dst, chunk) in target.data.iter_mut().zip(raw.chunks_exact(width)) {
            *dst = T::from_le_chunk(chunk);
        }
    }
    Ok((header, params))
}

/// SHA-256 over the raw bit patterns of every tensor, in canonical order.
pub fn parameter_digest<T: Real>(params: &ParameterSet<T>) -> String {
    let mut hasher = Sha256::new();
    for t in params.tensors() {
        hasher.update(t.name.as_bytes());
        hasher.update(T::to_le_bytes_vec(t.data));
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelPreset;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for preset in [ModelPreset::Pico, ModelPreset::Mlp2] {
            let cfg = preset.config(16);
            let params = reset_parameters::<f32>(&cfg, 11).unwrap();
            let path = dir.path().join(format!("{preset}.ckpt"));
            save_checkpoint(&path, &params, &cfg, 11, 42).unwrap();
            let (header, loaded) = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(header.epoch, 42);
            assert_eq!(header.seed, 11);
            assert_eq!(header.model, cfg);
            assert_eq!(parameter_digest(&params), parameter_digest(&loaded));
            assert_eq!(params, loaded);
        }
    }

    #[test]
    fn rejects_garbage_and_wrong_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        fs::write(&junk, b"hello").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&junk),
            Err(ModelError::Checkpoint(_))
        ));

        let cfg = ModelPreset::Mlp2.config(0);
        let params = reset_parameters::<f32>(&cfg, 1).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &params, &cfg, 1, 0).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }
}
