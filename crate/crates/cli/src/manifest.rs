//! Stage manifests and the output-directory lock.
//!
//! A manifest records the hash of the config section a stage read, the
//! hashes of the upstream manifests it consumed and digests of its outputs.
//! It carries no timestamps, so identical config and inputs produce a
//! byte-identical manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: Value,
    pub upstream: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a JSON value. Object keys serialize in sorted order.
pub fn hash_value(v: &Value) -> String {
    sha256_bytes(serde_json::to_string(v).expect("json serializes").as_bytes())
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

/// Digest of a text file's lines after sorting, for files whose line order
/// depends on scheduling.
pub fn sorted_lines_hash(path: &Path) -> CliResult<String> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines: Vec<&str> = text.lines().collect();
    lines.sort_unstable();
    Ok(sha256_bytes(lines.join("\n").as_bytes()))
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join("manifests").join(format!("{stage}.json"))
}

/// The manifest of `stage` and the hash of its file, if present.
pub fn read_manifest(out: &Path, stage: &str) -> CliResult<Option<(Manifest, String)>> {
    let path = manifest_path(out, stage);
    match fs::read(&path) {
        Ok(bytes) => {
            let m: Manifest = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::runtime(format!("corrupt manifest {}: {e}", path.display())))?;
            Ok(Some((m, sha256_bytes(&bytes))))
        }
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::runtime(format!("cannot read {}: {e}", path.display()))),
    }
}

pub fn write_manifest(out: &Path, m: &Manifest) -> CliResult<String> {
    let path = manifest_path(out, &m.stage);
    fs::create_dir_all(path.parent().expect("has parent"))?;
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&path, &text)?;
    Ok(sha256_bytes(text.as_bytes()))
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let path = out.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => {
                let _ = fs::write(&path, std::process::id().to_string());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::validation(format!(
                "output directory {} is locked by another run (remove {} if stale)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
