//! Dataset ingestion: parsing, implicit feedback, k-core filtering, splits
//! and evaluation candidate sampling.

mod filter;
mod io;
mod parse;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{k_core_filter, to_implicit};
pub use io::{read_items, read_splits, write_items, write_splits};
pub use parse::{attach_movielens_titles, parse_amazon, parse_movielens};
pub use split::{
    build_eval_candidates, sample_train_negatives, split_per_user, CandidateReport,
    NegativeReport, SplitRatios,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty after {k}-core filtering")]
    EmptyAfterFiltering { k: usize },
    #[error("invalid split ratios {0:?}: each must be positive and they must sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("user {user} has {count} interactions; at least 3 are needed to fill train, val and test")]
    TooFewInteractions { user: String, count: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("malformed split manifest: {0}")]
    Manifest(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Movielens,
    Amazon,
    Synthetic,
}

/// A catalogue entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    pub description: String,
    pub image_ref: Option<String>,
    pub source: Source,
}

impl Item {
    pub fn stub(item_id: impl Into<String>, source: Source) -> Self {
        Item {
            item_id: item_id.into(),
            title: String::new(),
            description: String::new(),
            image_ref: None,
            source,
        }
    }
}

/// An explicit rating as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user_id: String,
    pub item_id: String,
    pub value: f64,
    /// Parsed but unused; splits are random, not temporal.
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Observed,
    PseudoNegative,
}

/// A binary user-item signal. `label == 1` exactly when `origin` is observed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub label: u8,
    pub origin: Origin,
}

impl Interaction {
    pub fn observed(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            label: 1,
            origin: Origin::Observed,
        }
    }

    pub fn pseudo_negative(user_id: impl Into<String>, item_id: impl Into<String>) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            label: 0,
            origin: Origin::PseudoNegative,
        }
    }
}

/// Counters collected while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    /// Repeated (user, item) ratings; the last one wins.
    pub duplicate_ratings: usize,
    /// Metadata records without an item id.
    pub skipped_records: usize,
    /// Items referenced by ratings but missing from metadata.
    pub stub_items: usize,
}

/// Parsed explicit-feedback dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: Source,
    pub items: BTreeMap<String, Item>,
    pub ratings: Vec<Rating>,
    pub report: ParseReport,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.ratings
            .iter()
            .map(|r| r.user_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Converts every rating into an observed interaction.
    pub fn into_implicit(self) -> ImplicitDataset {
        let interactions = to_implicit(&self.ratings);
        ImplicitDataset {
            source: self.source,
            items: self.items,
            interactions,
        }
    }
}

/// Implicit-feedback dataset: unique observed (user, item) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitDataset {
    pub source: Source,
    pub items: BTreeMap<String, Item>,
    pub interactions: Vec<Interaction>,
}

impl ImplicitDataset {
    pub fn users(&self) -> BTreeSet<&str> {
        self.interactions.iter().map(|i| i.user_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Train/validation/test partitions plus sampled evaluation candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
    /// Per user: validation and test positives followed by sampled items the
    /// user never interacted with.
    pub eval_candidates: BTreeMap<String, Vec<String>>,
    /// Sorted ids of every item in the filtered catalogue.
    pub catalog: Vec<String>,
    pub seed: u64,
}

impl DatasetSplits {
    pub fn partition(&self, partition: Partition) -> &[Interaction] {
        match partition {
            Partition::Train => &self.train,
            Partition::Validation => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Positive items per user within one partition.
    pub fn positives(&self, partition: Partition) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for i in self.partition(partition) {
            out.entry(i.user_id.as_str())
                .or_default()
                .insert(i.item_id.as_str());
        }
        out
    }

    /// Every item the user has an observed interaction with, in any split.
    pub fn observed_items(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for i in self.train.iter().chain(&self.val).chain(&self.test) {
            out.entry(i.user_id.as_str())
                .or_default()
                .insert(i.item_id.as_str());
        }
        out
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|i| i.user_id.as_str())
            .collect()
    }

    /// Candidates ranked when evaluating `partition`, per user: that
    /// partition's positives plus the sampled negatives. Positives of the
    /// other held-out partition are excluded.
    pub fn evaluation_candidates(&self, partition: Partition) -> BTreeMap<&str, Vec<&str>> {
        let other = match partition {
            Partition::Validation => Partition::Test,
            Partition::Test => Partition::Validation,
            Partition::Train => return BTreeMap::new(),
        };
        let other_pos = self.positives(other);
        self.eval_candidates
            .iter()
            .map(|(user, cands)| {
                let skip = other_pos.get(user.as_str());
                let kept = cands
                    .iter()
                    .map(String::as_str)
                    .filter(|i| skip.map_or(true, |s| !s.contains(i)))
                    .collect();
                (user.as_str(), kept)
            })
            .collect()
    }
}
