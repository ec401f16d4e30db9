//! Sampled-candidate ranking evaluation.
//!
//! For each user the held-out positives are ranked together with the
//! sampled negatives; Precision, Recall and NDCG are computed at K with
//! binary gain and a `log2(rank + 1)` discount, then averaged per user.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetSplits, Interaction, Origin, Partition};
use crate::pool::map_bounded;
use crate::rng::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("NaN score for item {0}")]
    NanScore(String),
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("nothing to rank")]
    EmptyCandidates,
    #[error("no reports to aggregate")]
    EmptyReports,
    #[error("reports disagree on k ({0} vs {1})")]
    MismatchedK(usize, usize),
    #[error("scorer failed: {0}")]
    Scorer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Orders items by descending score, ties by ascending item id.
pub fn rank_candidates<'a>(scores: &[(&'a str, f64)]) -> Result<Vec<&'a str>, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyCandidates);
    }
    if let Some((item, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
        return Err(EvalError::NanScore(item.to_string()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(sorted.into_iter().map(|(i, _)| i).collect())
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn metrics_at_k(ranking: &[&str], relevant: &BTreeSet<&str>, k: usize) -> Result<RankingMetrics, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (idx, item) in ranking.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += discount(idx + 1);
        }
    }
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    Ok(RankingMetrics {
        k,
        precision: hits as f64 / k as f64,
        recall: hits as f64 / relevant.len() as f64,
        ndcg: dcg / idcg,
    })
}

/// Anything that can score a user's candidate items.
pub trait Scorer: Sync {
    fn score(&self, user_id: &str, items: &[&str]) -> Result<Vec<f64>, EvalError>;
}

/// Scores every item by its number of observed training interactions.
#[derive(Debug, Clone, Default)]
pub struct PopularityScorer {
    counts: BTreeMap<String, usize>,
}

impl PopularityScorer {
    pub fn from_train(train: &[Interaction]) -> Self {
        let mut counts = BTreeMap::new();
        for i in train.iter().filter(|i| i.origin == Origin::Observed && i.label == 1) {
            *counts.entry(i.item_id.clone()).or_insert(0) += 1;
        }
        PopularityScorer { counts }
    }

    pub fn count(&self, item_id: &str) -> usize {
        self.counts.get(item_id).copied().unwrap_or(0)
    }
}

impl Scorer for PopularityScorer {
    fn score(&self, _user: &str, items: &[&str]) -> Result<Vec<f64>, EvalError> {
        Ok(items.iter().map(|i| self.count(i) as f64).collect())
    }
}

/// Uniform pseudo-random scores, a pure function of (seed, user, item).
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, user: &str, items: &[&str]) -> Result<Vec<f64>, EvalError> {
        Ok(items
            .iter()
            .map(|i| (derive_seed(self.seed, &[user, i]) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub n_candidates: usize,
    pub metrics: RankingMetrics,
}

/// Metrics of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub k: usize,
    pub partition: Partition,
    pub seed: u64,
    pub per_user: Vec<UserMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Ranks each user's candidates for `partition` and averages per-user
/// metrics. Users without positives in the partition are left out.
pub fn evaluate(
    scorer: &dyn Scorer,
    splits: &DatasetSplits,
    partition: Partition,
    k: usize,
    parallelism: usize,
) -> Result<SplitReport, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let positives = splits.positives(partition);
    let candidates = splits.evaluation_candidates(partition);
    let users: Vec<(&str, &Vec<&str>)> = candidates
        .iter()
        .filter(|(u, _)| positives.contains_key(*u))
        .map(|(u, c)| (*u, c))
        .collect();
    let per_user = map_bounded(&users, parallelism, |_, (user, cands)| {
        let scores = scorer.score(user, cands)?;
        if scores.len() != cands.len() {
            return Err(EvalError::Scorer(format!(
                "{} scores for {} candidates",
                scores.len(),
                cands.len()
            )));
        }
        let pairs: Vec<(&str, f64)> = cands.iter().copied().zip(scores).collect();
        let ranking = rank_candidates(&pairs)?;
        let metrics = metrics_at_k(&ranking, &positives[user], k)?;
        Ok(UserMetrics {
            user_id: user.to_string(),
            n_candidates: cands.len(),
            metrics,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, EvalError>>()?;
    let n = per_user.len().max(1) as f64;
    let mean = |f: fn(&RankingMetrics) -> f64| per_user.iter().map(|u| f(&u.metrics)).sum::<f64>() / n;
    Ok(SplitReport {
        k,
        partition,
        seed: splits.seed,
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        ndcg: mean(|m| m.ndcg),
        per_user,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricStats { mean, std }
}

/// Cross-split summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub k: usize,
    pub n_splits: usize,
    pub precision: MetricStats,
    pub recall: MetricStats,
    pub ndcg: MetricStats,
    /// False when a single split was given and the std is reported as 0.
    pub std_defined: bool,
}

/// Mean and sample (n − 1) standard deviation of each metric over splits.
pub fn aggregate_splits(reports: &[SplitReport]) -> Result<AggregateReport, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyReports)?;
    if let Some(r) = reports.iter().find(|r| r.k != first.k) {
        return Err(EvalError::MismatchedK(first.k, r.k));
    }
    let col = |f: fn(&SplitReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Ok(AggregateReport {
        k: first.k,
        n_splits: reports.len(),
        precision: stats(&col(|r| r.precision)),
        recall: stats(&col(|r| r.recall)),
        ndcg: stats(&col(|r| r.ndcg)),
        std_defined: reports.len() > 1,
    })
}

/// Method-by-metric table with `mean±std` cells.
pub fn format_table(rows: &[(String, AggregateReport)]) -> String {
    let k = rows.first().map_or(10, |(_, r)| r.k);
    let mut out = format!("method,precision@{k},recall@{k},ndcg@{k}\n");
    let cell = |s: &MetricStats| format!("{:.6}±{:.6}", s.mean, s.std);
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            cell(&r.precision),
            cell(&r.recall),
            cell(&r.ndcg)
        ));
    }
    out
}
