//! Item representations assembled from embedded components.
//!
//! A combo tag is a `+`-separated list of components. `text` is the item
//! description, `image` the precomputed image embedding, and any strategy
//! tag the embedding of that strategy's response. `x_reflect` expands to the
//! two cross-reflection responses, `x_reflect_keyword` to their keyword
//! variants and `xr_separate` is accepted for `xr_separate_fuse`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{concat, EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::corpus::Item;
use crate::gateway::EnrichmentRecord;
use crate::pool::map_bounded;
use crate::prompting::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Description,
    Image,
    Response(Strategy),
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Description => f.write_str("text"),
            Component::Image => f.write_str("image"),
            Component::Response(s) => f.write_str(s.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combo {
    pub tag: String,
    pub components: Vec<Component>,
}

impl FromStr for Combo {
    type Err = EmbeddingError;

    fn from_str(tag: &str) -> Result<Self, Self::Err> {
        let mut components = Vec::new();
        for part in tag.split('+').map(str::trim) {
            match part {
                "text" | "description" => components.push(Component::Description),
                "image" => components.push(Component::Image),
                "x_reflect" => components.extend([
                    Component::Response(Strategy::XrSeparateFuse),
                    Component::Response(Strategy::XrCombined),
                ]),
                "x_reflect_keyword" => components.extend([
                    Component::Response(Strategy::XrKeywordSeparate),
                    Component::Response(Strategy::XrKeywordCombined),
                ]),
                "xr_separate" => components.push(Component::Response(Strategy::XrSeparateFuse)),
                other => components.push(Component::Response(
                    other
                        .parse()
                        .map_err(|_| EmbeddingError::UnknownComponent(other.to_string()))?,
                )),
            }
        }
        Ok(Combo {
            tag: tag.to_string(),
            components,
        })
    }
}

impl Combo {
    /// Strategies whose records the combo needs.
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::new();
        for c in &self.components {
            if let Component::Response(s) = c {
                if !out.contains(s) {
                    out.push(*s);
                }
            }
        }
        out
    }

    pub fn needs_images(&self) -> bool {
        self.components.contains(&Component::Image)
    }
}

pub type ItemRecords = HashMap<Strategy, EnrichmentRecord>;

#[derive(Debug, Clone, PartialEq)]
pub struct ItemRepresentation {
    pub item_id: String,
    pub combo_tag: String,
    pub vector: EmbeddingVector,
}

pub fn build_representation(
    combo: &Combo,
    item: &Item,
    records: &ItemRecords,
    image_embs: Option<&HashMap<String, EmbeddingVector>>,
    embedder: &dyn TextEmbedder,
) -> Result<ItemRepresentation, EmbeddingError> {
    let mut parts = Vec::with_capacity(combo.components.len());
    for c in &combo.components {
        let v = match c {
            Component::Description => embedder.embed(&item.description)?,
            Component::Image => image_embs
                .and_then(|m| m.get(&item.item_id))
                .cloned()
                .ok_or_else(|| EmbeddingError::MissingImageEmbedding(item.item_id.clone()))?,
            Component::Response(s) => {
                let rec = records.get(s).ok_or_else(|| EmbeddingError::MissingRecord {
                    item_id: item.item_id.clone(),
                    strategy: s.tag().to_string(),
                })?;
                embedder.embed(&rec.response_text)?
            }
        };
        parts.push(v);
    }
    let refs: Vec<&EmbeddingVector> = parts.iter().collect();
    Ok(ItemRepresentation {
        item_id: item.item_id.clone(),
        combo_tag: combo.tag.clone(),
        vector: concat(&refs),
    })
}

/// Dense matrix of representations for one combo, rows in item order.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    pub combo_tag: String,
    pub model_id: String,
    pub dim: usize,
    pub item_ids: Vec<String>,
    pub values: Vec<f32>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    combo_tag: String,
    model_id: String,
    dim: usize,
    items: Vec<String>,
}

impl RepresentationSet {
    pub fn from_rows(
        combo_tag: impl Into<String>,
        model_id: impl Into<String>,
        dim: usize,
        item_ids: Vec<String>,
        values: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        if values.len() != dim * item_ids.len() {
            return Err(EmbeddingError::DimMismatch {
                expected: dim * item_ids.len(),
                actual: values.len(),
                context: Some("representation matrix".into()),
            });
        }
        let index = item_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(RepresentationSet {
            combo_tag: combo_tag.into(),
            model_id: model_id.into(),
            dim,
            item_ids,
            values,
            index,
        })
    }

    pub fn from_representations(reps: Vec<ItemRepresentation>) -> Result<Self, EmbeddingError> {
        let first = reps
            .first()
            .ok_or_else(|| EmbeddingError::UnknownComponent("empty representation list".into()))?;
        let (combo, model, dim) = (first.combo_tag.clone(), first.vector.model_id.clone(), first.vector.dim());
        let mut ids = Vec::with_capacity(reps.len());
        let mut values = Vec::with_capacity(reps.len() * dim);
        for r in reps {
            if r.vector.dim() != dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: dim,
                    actual: r.vector.dim(),
                    context: Some(r.item_id),
                });
            }
            values.extend_from_slice(&r.vector.values);
            ids.push(r.item_id);
        }
        Self::from_rows(combo, model, dim, ids, values)
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&[f32]> {
        self.index
            .get(item_id)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    fn stem(dir: &Path, combo_tag: &str) -> PathBuf {
        dir.join(combo_tag)
    }

    /// Writes `<combo>.f32` (little-endian floats) and `<combo>.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), EmbeddingError> {
        fs::create_dir_all(dir).map_err(|e| EmbeddingError::io(dir, e))?;
        let stem = Self::stem(dir, &self.combo_tag);
        let bin = stem.with_extension("f32");
        let json = stem.with_extension("json");
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes).map_err(|e| EmbeddingError::io(&bin, e))?;
        let manifest = Manifest {
            combo_tag: self.combo_tag.clone(),
            model_id: self.model_id.clone(),
            dim: self.dim,
            items: self.item_ids.clone(),
        };
        fs::write(&json, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| EmbeddingError::io(&json, e))?;
        Ok((bin, json))
    }

    pub fn read(dir: &Path, combo_tag: &str) -> Result<Self, EmbeddingError> {
        let stem = Self::stem(dir, combo_tag);
        let json = stem.with_extension("json");
        let bin = stem.with_extension("f32");
        let text = fs::read_to_string(&json).map_err(|e| EmbeddingError::io(&json, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| EmbeddingError::Format {
            path: json.display().to_string(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        let bytes = fs::read(&bin).map_err(|e| EmbeddingError::io(&bin, e))?;
        if bytes.len() % 4 != 0 {
            return Err(EmbeddingError::Format {
                path: bin.display().to_string(),
                line: 0,
                message: "length is not a multiple of 4".into(),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_rows(m.combo_tag, m.model_id, m.dim, m.items, values)
    }
}

/// Builds the representation of every item, in the given order.
pub fn build_representations(
    combo: &Combo,
    items: &[Item],
    records: &HashMap<String, ItemRecords>,
    image_embs: Option<&HashMap<String, EmbeddingVector>>,
    embedder: &dyn TextEmbedder,
    parallelism: usize,
) -> Result<RepresentationSet, EmbeddingError> {
    let empty = ItemRecords::new();
    let reps = map_bounded(items, parallelism, |_, item| {
        let recs = records.get(&item.item_id).unwrap_or(&empty);
        build_representation(combo, item, recs, image_embs, embedder)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    if reps.is_empty() {
        return RepresentationSet::from_rows(&combo.tag, embedder.model_id(), 0, Vec::new(), Vec::new());
    }
    RepresentationSet::from_representations(reps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;
    use crate::embedding::HashEmbedder;

    fn record(item: &str, s: Strategy, text: &str) -> EnrichmentRecord {
        EnrichmentRecord {
            item_id: item.into(),
            strategy_tag: s.tag().into(),
            model_id: "mock".into(),
            prompt_hash: "h".into(),
            response_text: text.into(),
            created_at: 0,
        }
    }

    #[test]
    fn combo_parsing() {
        let c: Combo = "x_reflect".parse().unwrap();
        assert_eq!(
            c.components,
            vec![
                Component::Response(Strategy::XrSeparateFuse),
                Component::Response(Strategy::XrCombined)
            ]
        );
        let c: Combo = "text+image".parse().unwrap();
        assert_eq!(c.components, vec![Component::Description, Component::Image]);
        assert!(c.needs_images());
        assert!("bogus".parse::<Combo>().is_err());
        let c: Combo = "x_reflect+text".parse().unwrap();
        assert_eq!(c.components.len(), 3);
    }

    #[test]
    fn text_and_image_dims() {
        let e = HashEmbedder::new(384);
        let mut item = Item::stub("a", Source::Amazon);
        item.description = "some words".into();
        let text = build_representation(&"text".parse().unwrap(), &item, &ItemRecords::new(), None, &e).unwrap();
        assert_eq!(text.vector.values, e.embed("some words").unwrap().values);

        let img: HashMap<_, _> = [("a".to_string(), EmbeddingVector::zeros(512, "clip"))].into();
        let both = build_representation(&"text+image".parse().unwrap(), &item, &ItemRecords::new(), Some(&img), &e)
            .unwrap();
        assert_eq!(both.vector.dim(), 896);
        assert!(matches!(
            build_representation(&"text+image".parse().unwrap(), &item, &ItemRecords::new(), None, &e),
            Err(EmbeddingError::MissingImageEmbedding(_))
        ));
        assert!(matches!(
            build_representation(&"cot".parse().unwrap(), &item, &ItemRecords::new(), None, &e),
            Err(EmbeddingError::MissingRecord { .. })
        ));
    }

    #[test]
    fn set_round_trip() {
        let e = HashEmbedder::new(8);
        let items: Vec<Item> = ["a", "b"].iter().map(|i| Item::stub(*i, Source::Amazon)).collect();
        let mut records = HashMap::new();
        for i in &items {
            let mut m = ItemRecords::new();
            m.insert(Strategy::Cot, record(&i.item_id, Strategy::Cot, &format!("resp {}", i.item_id)));
            records.insert(i.item_id.clone(), m);
        }
        let set = build_representations(&"cot".parse().unwrap(), &items, &records, None, &e, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.write(dir.path()).unwrap();
        let back = RepresentationSet::read(dir.path(), "cot").unwrap();
        assert_eq!(back, set);
        assert_eq!(back.get("b").unwrap(), e.embed("resp b").unwrap().values.as_slice());
    }
}
