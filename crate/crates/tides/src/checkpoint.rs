//! Parameter checkpoints: a flat binary of named 64-bit tensors plus a
//! JSON manifest recording names, shapes, frozen flags, and offsets.
//!
//! Saving the same parameters twice produces byte-identical files, so
//! checkpoints can be diffed and hashed in tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::Param;
use crate::error::{Result, TidesError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    /// Offset into the binary, counted in f64 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

/// Write `params` to `bin_path` (little-endian f64s) and the manifest to
/// `manifest_path`.
pub fn save(params: &[&Param], bin_path: &Path, manifest_path: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::new();
    let mut offset = 0usize;
    for p in params {
        let expect: usize = p.shape.iter().product();
        if expect != p.data.len() {
            return Err(TidesError::validation(format!(
                "checkpoint: param {} has {} values but shape {:?}",
                p.name,
                p.data.len(),
                p.shape
            )));
        }
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            frozen: p.frozen,
            offset,
            len: p.data.len(),
        });
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.data.len();
    }
    let manifest = Manifest { version: CHECKPOINT_VERSION, entries };
    std::fs::write(bin_path, bytes)?;
    std::fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Read a checkpoint back as a list of [`Param`]s in manifest order.
pub fn load(bin_path: &Path, manifest_path: &Path) -> Result<Vec<Param>> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(TidesError::validation(format!(
            "checkpoint: unsupported version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let bytes = std::fs::read(bin_path)?;
    let total: usize = manifest.entries.iter().map(|e| e.len).sum();
    if bytes.len() != total * 8 {
        return Err(TidesError::validation(format!(
            "checkpoint: binary holds {} bytes but manifest expects {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut params = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(TidesError::validation(format!(
                "checkpoint: entry {} shape {:?} inconsistent with len {}",
                e.name, e.shape, e.len
            )));
        }
        let start = e.offset * 8;
        let data = bytes[start..start + e.len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(Param { name: e.name.clone(), shape: e.shape.clone(), data, frozen: e.frozen });
    }
    Ok(params)
}

/// Copy loaded values into live parameters, matched by name; shapes and
/// frozen flags must agree and every target must be covered.
pub fn restore(targets: Vec<&mut Param>, loaded: &[Param]) -> Result<()> {
    for t in targets {
        let src = loaded.iter().find(|p| p.name == t.name).ok_or_else(|| {
            TidesError::validation(format!("checkpoint: missing parameter {}", t.name))
        })?;
        if src.shape != t.shape || src.frozen != t.frozen {
            return Err(TidesError::validation(format!(
                "checkpoint: parameter {} mismatch (shape {:?} vs {:?}, frozen {} vs {})",
                t.name, src.shape, t.shape, src.frozen, t.frozen
            )));
        }
        t.data.copy_from_slice(&src.data);
    }
    Ok(())
}
