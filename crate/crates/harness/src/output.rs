//! CSV emission, JSON sidecars and configuration hashing.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the configuration's JSON encoding.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&json);
    Ok(hex::encode(&digest[..8]))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `meta` next to `csv_path` as `<stem>.json`.
pub fn write_sidecar<T: Serialize>(csv_path: &Path, meta: &T) -> Result<()> {
    let path = csv_path.with_extension("json");
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
