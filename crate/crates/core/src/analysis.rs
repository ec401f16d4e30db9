//! How far generated content drifts from the original description.
//!
//! For each item the description embedding is compared with the embedding
//! of its image description (the visual-only response, used as reference)
//! and with each strategy's response.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Item;
use crate::embedding::{cosine, EmbeddingError, ItemRecords, TextEmbedder};
use crate::prompting::Strategy;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("no rows to summarise for {0}")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub item_id: String,
    pub reference_sim: f64,
    pub strategy_sims: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub rows: Vec<SimilarityRow>,
    /// Items left out for lacking an image description, a strategy
    /// response or a non-empty description.
    pub skipped: Vec<String>,
}

/// One row per item that has every input, ordered by item id.
pub fn similarity_table(
    items: &[Item],
    records: &HashMap<String, ItemRecords>,
    embedder: &dyn TextEmbedder,
    strategies: &[Strategy],
) -> Result<SimilarityTable, AnalysisError> {
    let mut sorted: Vec<&Item> = items.iter().collect();
    sorted.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let mut table = SimilarityTable::default();
    'items: for item in sorted {
        let Some(recs) = records.get(&item.item_id) else {
            table.skipped.push(item.item_id.clone());
            continue;
        };
        let Some(image_desc) = recs.get(&Strategy::VisualOnly) else {
            table.skipped.push(item.item_id.clone());
            continue;
        };
        if strategies.iter().any(|s| !recs.contains_key(s)) {
            table.skipped.push(item.item_id.clone());
            continue;
        }
        let desc = embedder.embed(&item.description)?;
        let sim = |text: &str| -> Result<Option<f64>, AnalysisError> {
            match cosine(&desc, &embedder.embed(text)?) {
                Ok(c) => Ok(Some(c)),
                Err(EmbeddingError::ZeroVector) => Ok(None),
                Err(e) => Err(e.into()),
            }
        };
        let Some(reference_sim) = sim(&image_desc.response_text)? else {
            table.skipped.push(item.item_id.clone());
            continue;
        };
        let mut strategy_sims = BTreeMap::new();
        for s in strategies {
            match sim(&recs[s].response_text)? {
                Some(c) => {
                    strategy_sims.insert(s.tag().to_string(), c);
                }
                None => {
                    table.skipped.push(item.item_id.clone());
                    continue 'items;
                }
            }
        }
        table.rows.push(SimilarityRow {
            item_id: item.item_id.clone(),
            reference_sim,
            strategy_sims,
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    pub fraction_below_reference: f64,
    pub mean_sim: f64,
    pub mean_reference: f64,
}

pub fn diversity_summary(rows: &[SimilarityRow], strategy: &str) -> Result<DiversitySummary, AnalysisError> {
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.strategy_sims.get(strategy).map(|&s| (s, r.reference_sim)))
        .collect();
    if pairs.is_empty() {
        return Err(AnalysisError::Empty(strategy.to_string()));
    }
    let n = pairs.len() as f64;
    Ok(DiversitySummary {
        fraction_below_reference: pairs.iter().filter(|(s, r)| s < r).count() as f64 / n,
        mean_sim: pairs.iter().map(|p| p.0).sum::<f64>() / n,
        mean_reference: pairs.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// CSV with `item_id,reference_sim` followed by one column per strategy.
pub fn to_csv(rows: &[SimilarityRow], strategies: &[Strategy]) -> String {
    let mut out = String::from("item_id,reference_sim");
    for s in strategies {
        out.push(',');
        out.push_str(s.tag());
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.item_id);
        out.push_str(&format!(",{}", r.reference_sim));
        for s in strategies {
            match r.strategy_sims.get(s.tag()) {
                Some(v) => out.push_str(&format!(",{v}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, reference: f64, sim: f64) -> SimilarityRow {
        SimilarityRow {
            item_id: id.into(),
            reference_sim: reference,
            strategy_sims: [("cot".to_string(), sim)].into(),
        }
    }

    #[test]
    fn summary_counts() {
        let all_below = [row("a", 0.9, 0.1), row("b", 0.8, 0.2)];
        assert_eq!(diversity_summary(&all_below, "cot").unwrap().fraction_below_reference, 1.0);
        let half = [row("a", 0.9, 0.1), row("b", 0.2, 0.8), row("c", 0.5, 0.4), row("d", 0.1, 0.3)];
        let s = diversity_summary(&half, "cot").unwrap();
        assert_eq!(s.fraction_below_reference, 0.5);
        assert!((s.mean_reference - 0.425).abs() < 1e-12);
        assert!(matches!(diversity_summary(&[], "cot"), Err(AnalysisError::Empty(_))));
    }
}
