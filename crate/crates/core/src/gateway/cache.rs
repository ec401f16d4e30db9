//! Persistent response cache.
//!
//! Records are appended to a JSON-lines file as they arrive. A torn or
//! corrupt line is skipped on load (the response is fetched again).
//! [`ResponseCache::compact`] rewrites the file through a temporary file and
//! a rename.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, EnrichmentRecord, GatewayError};
use crate::rng::sha256_hex;

/// Hash of exactly what the model sees: prompt text and image reference.
pub fn prompt_hash(text: &str, image_ref: Option<&str>) -> String {
    let mut material = String::with_capacity(text.len() + 64);
    material.push_str(text);
    material.push('\u{0}');
    if let Some(img) = image_ref {
        material.push_str(img);
    }
    sha256_hex(&material)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub item_id: String,
    pub strategy_tag: String,
    pub model_id: String,
    pub prompt_hash: String,
}

impl CacheKey {
    pub fn for_request(request: &ChatRequest<'_>, model_id: &str) -> Self {
        CacheKey {
            item_id: request.item_id.to_string(),
            strategy_tag: request.prompt.strategy.tag().to_string(),
            model_id: model_id.to_string(),
            prompt_hash: prompt_hash(&request.prompt.text, request.prompt.image_ref.as_deref()),
        }
    }
}

struct Inner {
    records: HashMap<CacheKey, EnrichmentRecord>,
    file: Option<File>,
}

pub struct ResponseCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
    corrupt_lines: usize,
}

impl std::fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseCache")
            .field("path", &self.path)
            .field("len", &self.len())
            .finish()
    }
}

impl ResponseCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            inner: Mutex::new(Inner {
                records: HashMap::new(),
                file: None,
            }),
            corrupt_lines: 0,
        }
    }

    /// Opens (or creates) the cache file at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| GatewayError::io(parent, e))?;
            }
        }
        let mut records = HashMap::new();
        let mut corrupt_lines = 0;
        if path.exists() {
            let file = File::open(&path).map_err(|e| GatewayError::io(&path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| GatewayError::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<EnrichmentRecord>(&line) {
                    Ok(rec) => {
                        records.insert(rec.key(), rec);
                    }
                    Err(e) => {
                        corrupt_lines += 1;
                        warn!("{}:{}: skipping corrupt cache record ({e})", path.display(), idx + 1);
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::io(&path, e))?;
        Ok(ResponseCache {
            path: Some(path),
            inner: Mutex::new(Inner {
                records,
                file: Some(file),
            }),
            corrupt_lines,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Lines skipped as unreadable when the cache was opened.
    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<EnrichmentRecord> {
        self.lock().records.get(key).cloned()
    }

    /// Stores `record` unless its key is already present, and returns the
    /// stored record. Concurrent inserts of one key persist a single line.
    pub fn insert(&self, record: EnrichmentRecord) -> Result<EnrichmentRecord, GatewayError> {
        let mut inner = self.lock();
        let key = record.key();
        if let Some(existing) = inner.records.get(&key) {
            return Ok(existing.clone());
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("records serialize");
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new(""));
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::io(path, e))?;
        }
        inner.records.insert(key, record.clone());
        Ok(record)
    }

    /// Every record, sorted by key.
    pub fn records(&self) -> Vec<EnrichmentRecord> {
        let mut out: Vec<_> = self.lock().records.values().cloned().collect();
        out.sort_by_key(|r| r.key());
        out
    }

    /// Rewrites the backing file with one line per record, via a temporary
    /// file renamed into place.
    pub fn compact(&self) -> Result<(), GatewayError> {
        let Some(path) = self.path.as_deref() else {
            return Ok(());
        };
        let mut inner = self.lock();
        let mut records: Vec<_> = inner.records.values().collect();
        records.sort_by_key(|r| r.key());
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp).map_err(|e| GatewayError::io(&tmp, e))?;
            for r in records {
                let line = serde_json::to_string(r).expect("records serialize");
                writeln!(f, "{line}").map_err(|e| GatewayError::io(&tmp, e))?;
            }
            f.sync_all().map_err(|e| GatewayError::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| GatewayError::io(path, e))?;
        inner.file = Some(
            OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| GatewayError::io(path, e))?,
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(item: &str, hash: &str) -> EnrichmentRecord {
        EnrichmentRecord {
            item_id: item.into(),
            strategy_tag: "visual_only".into(),
            model_id: "m".into(),
            prompt_hash: hash.into(),
            response_text: format!("text {item}"),
            created_at: 1,
        }
    }

    #[test]
    fn reload_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.jsonl");
        {
            let c = ResponseCache::open(&p).unwrap();
            c.insert(rec("a", "h1")).unwrap();
            c.insert(rec("b", "h1")).unwrap();
        }
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"item_id\": \"c\", trunc");
        fs::write(&p, text).unwrap();
        let c = ResponseCache::open(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.corrupt_lines(), 1);
        c.compact().unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 2);
        c.insert(rec("d", "h1")).unwrap();
        assert_eq!(ResponseCache::open(&p).unwrap().len(), 3);
    }

    #[test]
    fn duplicate_insert_keeps_one_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.jsonl");
        let c = ResponseCache::open(&p).unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| c.insert(rec("a", "h")).unwrap());
            }
        });
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
    }

    #[test]
    fn hash_covers_image() {
        assert_ne!(prompt_hash("x", None), prompt_hash("x", Some("img")));
        assert_ne!(prompt_hash("x", None), prompt_hash("x ", None));
    }
}
