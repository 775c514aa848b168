//! Artifact output: CSV tables and JSON reports with reproducibility
//! sidecars.
//!
//! Bodies are deterministic for fixed inputs (floats use shortest
//! round-trip formatting, field order is fixed), so reruns produce
//! byte-identical files. Anything time-dependent lives in the
//! `<name>.meta.json` sidecar next to each artifact.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

/// Reproducibility record attached to every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    /// FNV-1a hash of the resolved configuration, hex encoded.
    pub config_hash: String,
    pub seed: u64,
    pub n_hermite: usize,
    pub fourier_k: usize,
    pub tool_version: String,
    /// The invocation this artifact came from.
    pub command: String,
    /// Unix seconds at write time; the only non-deterministic field.
    pub written_at: u64,
}

impl Metadata {
    pub fn new(
        config_text: &str,
        seed: u64,
        n_hermite: usize,
        fourier_k: usize,
        command: String,
    ) -> Self {
        Metadata {
            config_hash: format!("{:016x}", fnv1a(config_text.as_bytes())),
            seed,
            n_hermite,
            fourier_k,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            written_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn sidecar_path(body: &Path) -> PathBuf {
    let mut name = body
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    body.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes the metadata sidecar next to an artifact body.
pub fn write_meta(body: &Path, meta: &Metadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Config(format!("metadata serialization: {e}")))?;
    fs::write(sidecar_path(body), text + "\n")?;
    Ok(())
}

/// Writes an RFC-4180 CSV with the given header and rows, plus its sidecar.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
    meta: &Metadata,
) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Config(format!("csv open {}: {e}", path.display())))?;
    w.write_record(header)
        .and_then(|()| {
            for row in rows {
                w.write_record(row)?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Config(format!("csv write {}: {e}", path.display())))?;
    write_meta(path, meta)
}

/// Writes a pretty-printed JSON report plus its sidecar. Field order
/// follows the struct definition, so bodies are byte-stable.
pub fn write_json<T: Serialize>(path: &Path, value: &T, meta: &Metadata) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    fs::write(path, text + "\n")?;
    write_meta(path, meta)
}

/// Shortest round-trip decimal form; the stable float formatting used in
/// CSV bodies.
pub fn fmt_f64(x: f64) -> String {
    let buf = format!("{x}");
    if buf == "-0" {
        "0".to_string()
    } else {
        buf
    }
}
