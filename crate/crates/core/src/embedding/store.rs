//! Vector files: a `#model_id=<s> dim=<n>` header line, then CSV rows of
//! `key,v1,...,vn`. Used for the text-embedding store (keyed by the SHA-256
//! of the text) and for precomputed image embeddings (keyed by item id).

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::rng::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorFileHeader {
    pub model_id: String,
    pub dim: usize,
}

impl VectorFileHeader {
    pub fn line(&self) -> String {
        format!("#model_id={} dim={}", self.model_id, self.dim)
    }

    fn parse(path: &Path, line: &str) -> Result<Self, EmbeddingError> {
        let bad = |message: &str| EmbeddingError::Format {
            path: path.display().to_string(),
            line: 1,
            message: message.to_string(),
        };
        let rest = line.trim_end().strip_prefix('#').ok_or_else(|| bad("missing header"))?;
        let (mut model_id, mut dim) = (None, None);
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("model_id", v)) => model_id = Some(v.to_string()),
                Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|_| bad("dim is not an integer"))?),
                _ => return Err(bad(&format!("unexpected header field {field:?}"))),
            }
        }
        Ok(VectorFileHeader {
            model_id: model_id.ok_or_else(|| bad("header lacks model_id"))?,
            dim: dim.ok_or_else(|| bad("header lacks dim"))?,
        })
    }
}

fn row(key: &str, values: &[f32]) -> String {
    let mut s = String::with_capacity(key.len() + values.len() * 12);
    s.push_str(key);
    for v in values {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s.push('\n');
    s
}

/// Reads a vector file; every row must carry exactly `dim` values.
fn read_vector_file(path: &Path) -> Result<(VectorFileHeader, Vec<(String, Vec<f32>)>), EmbeddingError> {
    let mut file = File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|e| EmbeddingError::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let header = VectorFileHeader::parse(path, first)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| EmbeddingError::Format {
            path: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line() + 1),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        let fmt = |message: String| EmbeddingError::Format {
            path: path.display().to_string(),
            line,
            message,
        };
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let key = rec[0].to_string();
        if rec.len() - 1 != header.dim {
            return Err(fmt(format!(
                "row {key:?} has {} values, header declares dim={}",
                rec.len() - 1,
                header.dim
            )));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| fmt(format!("row {key:?}: {e}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fmt(format!("row {key:?} has a non-finite value")));
        }
        rows.push((key, values));
    }
    Ok((header, rows))
}

/// Writes a vector file with rows in the given order.
pub fn write_vector_file<'a>(
    path: &Path,
    header: &VectorFileHeader,
    rows: impl IntoIterator<Item = (&'a str, &'a [f32])>,
) -> Result<(), EmbeddingError> {
    let mut out = String::new();
    out.push_str(&header.line());
    out.push('\n');
    for (key, values) in rows {
        if values.len() != header.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: header.dim,
                actual: values.len(),
                context: Some(key.to_string()),
            });
        }
        out.push_str(&row(key, values));
    }
    fs::write(path, out).map_err(|e| EmbeddingError::io(path, e))
}

/// Loads precomputed image embeddings keyed by item id.
pub fn load_image_embeddings(path: &Path) -> Result<HashMap<String, EmbeddingVector>, EmbeddingError> {
    let (header, rows) = read_vector_file(path)?;
    Ok(rows
        .into_iter()
        .map(|(k, values)| {
            (
                k,
                EmbeddingVector {
                    values,
                    model_id: header.model_id.clone(),
                },
            )
        })
        .collect())
}

/// Wraps an embedder with a persistent text-hash keyed store so each unique
/// text is encoded once.
pub struct CachedEmbedder<E> {
    inner: E,
    path: Option<PathBuf>,
    state: Mutex<(HashMap<String, Vec<f32>>, Option<File>)>,
}

impl<E: TextEmbedder> CachedEmbedder<E> {
    pub fn in_memory(inner: E) -> Self {
        CachedEmbedder {
            inner,
            path: None,
            state: Mutex::new((HashMap::new(), None)),
        }
    }

    /// Opens the store at `path`, creating it with this embedder's header if
    /// absent. A header for another model or dim is an error.
    pub fn open(inner: E, path: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let path = path.into();
        let header = VectorFileHeader {
            model_id: inner.model_id().to_string(),
            dim: inner.dim(),
        };
        let mut map = HashMap::new();
        let exists = path.exists() && fs::metadata(&path).map(|m| m.len() > 0).unwrap_or(false);
        if exists {
            // Drop a torn final line left by an interrupted append.
            let text = fs::read_to_string(&path).map_err(|e| EmbeddingError::io(&path, e))?;
            if !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                fs::write(&path, &text[..keep]).map_err(|e| EmbeddingError::io(&path, e))?;
                log::warn!("{}: dropped a truncated trailing row", path.display());
            }
            let first = BufReader::new(File::open(&path).map_err(|e| EmbeddingError::io(&path, e))?)
                .lines()
                .next()
                .transpose()
                .map_err(|e| EmbeddingError::io(&path, e))?
                .unwrap_or_default();
            let found = VectorFileHeader::parse(&path, &first)?;
            if found.dim != header.dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: header.dim,
                    actual: found.dim,
                    context: Some(path.display().to_string()),
                });
            }
            if found.model_id != header.model_id {
                return Err(EmbeddingError::Format {
                    path: path.display().to_string(),
                    line: 1,
                    message: format!("store belongs to model {}, not {}", found.model_id, header.model_id),
                });
            }
            map.extend(read_vector_file(&path)?.1);
        } else {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| EmbeddingError::io(parent, e))?;
                }
            }
            fs::write(&path, format!("{}\n", header.line())).map_err(|e| EmbeddingError::io(&path, e))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| EmbeddingError::io(&path, e))?;
        Ok(CachedEmbedder {
            inner,
            path: Some(path),
            state: Mutex::new((map, Some(file))),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: TextEmbedder> TextEmbedder for CachedEmbedder<E> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let key = sha256_hex(text);
        if let Some(v) = self.state.lock().unwrap_or_else(|e| e.into_inner()).0.get(&key) {
            return EmbeddingVector::new(v.clone(), self.inner.model_id());
        }
        let vector = self.inner.embed(text)?;
        if vector.dim() != self.inner.dim() {
            return Err(EmbeddingError::DimMismatch {
                expected: self.inner.dim(),
                actual: vector.dim(),
                context: Some("backend output".into()),
            });
        }
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if !state.0.contains_key(&key) {
            if let Some(f) = state.1.as_mut() {
                let path = self.path.as_deref().unwrap_or(Path::new(""));
                f.write_all(row(&key, &vector.values).as_bytes())
                    .map_err(|e| EmbeddingError::io(path, e))?;
            }
            state.0.insert(key, vector.values.clone());
        }
        Ok(vector)
    }
}
