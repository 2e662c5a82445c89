//! Named-array parameter archives.
//!
//! Layout: an 8-byte magic, a little-endian `u64` manifest length, a JSON
//! manifest listing `(name, rows, cols, dtype)` per array, then the raw
//! array data little-endian in manifest order. Values are stored as `f64`
//! regardless of the training precision — an `f32 -> f64 -> f32` round trip
//! is exact, and one on-disk dtype keeps checkpoints portable between the
//! 32-bit and 64-bit builds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::scalar::Scalar;

const MAGIC: &[u8; 8] = b"HLCNET01";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    dtype: String,
}

/// Writes `entries` to `path`, preserving order.
pub fn save<F: Scalar>(path: &Path, entries: &[(String, &Array2<F>)]) -> Result<()> {
    let manifest: Vec<ManifestEntry> = entries
        .iter()
        .map(|(name, a)| ManifestEntry {
            name: name.clone(),
            rows: a.nrows(),
            cols: a.ncols(),
            dtype: "f64".to_string(),
        })
        .collect();
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| CoreError::Checkpoint(format!("manifest encode: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_json)?;
    for (_, a) in entries {
        for &v in a.iter() {
            w.write_all(&v.to_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every array from `path` in stored order.
pub fn load<F: Scalar>(path: &Path) -> Result<Vec<(String, Array2<F>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Checkpoint(format!("{}: missing header", path.display())))?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| CoreError::Checkpoint(format!("{}: truncated manifest length", path.display())))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_json = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_json)
        .map_err(|_| CoreError::Checkpoint(format!("{}: truncated manifest", path.display())))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&manifest_json)
        .map_err(|e| CoreError::Checkpoint(format!("{}: manifest decode: {e}", path.display())))?;

    let mut out = Vec::with_capacity(manifest.len());
    for entry in manifest {
        if entry.dtype != "f64" {
            return Err(CoreError::Checkpoint(format!(
                "{}: array {} has unsupported dtype {}",
                path.display(),
                entry.name,
                entry.dtype
            )));
        }
        let n = entry.rows * entry.cols;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| {
            CoreError::Checkpoint(format!(
                "{}: truncated data for array {}",
                path.display(),
                entry.name
            ))
        })?;
        let mut a = Array2::<F>::zeros((entry.rows, entry.cols));
        for (i, v) in a.iter_mut().enumerate() {
            let mut chunk = [0u8; 8];
            chunk.copy_from_slice(&bytes[i * 8..(i + 1) * 8]);
            *v = F::from_f64(f64::from_le_bytes(chunk));
        }
        out.push((entry.name, a));
    }
    Ok(out)
}
