//! Pipeline configuration file (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mmrec_core::corpus::{Source, SplitRatios};
use mmrec_core::embedding::EmbeddingBackendConfig;
use mmrec_core::gateway::BackendConfig;
use mmrec_core::prompting::PromptConfig;
use mmrec_core::recsys::{Grid, Hyperparams};
use mmrec_core::synthetic::SyntheticConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Movielens,
    Amazon,
    Synthetic,
}

impl Preset {
    pub fn source(self) -> Source {
        match self {
            Preset::Movielens => Source::Movielens,
            Preset::Amazon => Source::Amazon,
            Preset::Synthetic => Source::Synthetic,
        }
    }

    pub fn ratios(self) -> SplitRatios {
        match self {
            Preset::Amazon => SplitRatios::AMAZON,
            Preset::Movielens | Preset::Synthetic => SplitRatios::MOVIELENS,
        }
    }
}

fn default_k_core() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub preset: Preset,
    /// MovieLens `ratings.dat`.
    #[serde(default)]
    pub ratings: Option<PathBuf>,
    /// MovieLens poster sidecar (`movie_id,image_ref`).
    #[serde(default)]
    pub posters: Option<PathBuf>,
    /// MovieLens description sidecar (`movie_id,description`).
    #[serde(default)]
    pub descriptions: Option<PathBuf>,
    /// Optional MovieLens `movies.dat` for titles.
    #[serde(default)]
    pub movies: Option<PathBuf>,
    /// Amazon metadata JSON-lines.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    /// Amazon reviews JSON-lines.
    #[serde(default)]
    pub reviews: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "default_k_core")]
    pub k_core: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_negatives() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Defaults to the preset's ratios.
    #[serde(default)]
    pub ratios: Option<SplitRatios>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_negatives")]
    pub eval_negatives: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: None,
            seeds: default_seeds(),
            eval_negatives: default_negatives(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatBackendConfig {
    Mock {
        #[serde(default = "default_mock_model")]
        model_id: String,
        #[serde(default = "default_one")]
        parallelism: usize,
    },
    Http(BackendConfig),
}

fn default_mock_model() -> String {
    "mock-lmm".into()
}
fn default_one() -> usize {
    1
}

impl Default for ChatBackendConfig {
    fn default() -> Self {
        ChatBackendConfig::Mock {
            model_id: default_mock_model(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hash {
        #[serde(default = "default_embedding_dim")]
        dim: usize,
    },
    Remote(EmbeddingBackendConfig),
}

fn default_embedding_dim() -> usize {
    384
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash {
            dim: default_embedding_dim(),
        }
    }
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Baseline rows added to the table: `popularity`, `random`.
    #[serde(default = "default_baselines")]
    pub baselines: Vec<String>,
}

fn default_baselines() -> Vec<String> {
    vec!["popularity".into(), "random".into()]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: default_k(),
            baselines: default_baselines(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Strategies compared against the reference; defaults to every
    /// enriched strategy except `visual_only`.
    #[serde(default)]
    pub strategies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Defaults to the preset's prompt settings.
    #[serde(default)]
    pub prompting: Option<PromptConfig>,
    /// Strategies to enrich, in addition to those the combos need.
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub chat_backend: ChatBackendConfig,
    #[serde(default)]
    pub embedding_backend: EmbeddingConfig,
    /// Precomputed image embeddings for `image` combo components.
    #[serde(default)]
    pub image_embeddings: Option<PathBuf>,
    #[serde(default = "default_combos")]
    pub combos: Vec<String>,
    #[serde(default)]
    pub train: Hyperparams,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_combos() -> Vec<String> {
    vec!["text".into(), "x_reflect".into()]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Reads the config; relative dataset paths resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut cfg.dataset;
        for p in [
            &mut d.ratings,
            &mut d.posters,
            &mut d.descriptions,
            &mut d.movies,
            &mut d.metadata,
            &mut d.reviews,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.image_embeddings.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.split.seeds.is_empty() {
            return Err(CliError::validation("split.seeds must not be empty"));
        }
        self.ratios().validate().map_err(CliError::validation)?;
        if self.dataset.k_core == 0 {
            return Err(CliError::validation("dataset.k_core must be at least 1"));
        }
        self.train.validate().map_err(CliError::validation)?;
        if self.grid.learning_rates.is_empty() || self.grid.dropouts.is_empty() {
            return Err(CliError::validation("grid lists must not be empty"));
        }
        if self.eval.k == 0 {
            return Err(CliError::validation("eval.k must be at least 1"));
        }
        if let ChatBackendConfig::Http(b) = &self.chat_backend {
            b.validate().map_err(CliError::validation)?;
        }
        Ok(())
    }

    pub fn ratios(&self) -> SplitRatios {
        self.split.ratios.unwrap_or_else(|| self.dataset.preset.ratios())
    }

    pub fn prompt_config(&self) -> PromptConfig {
        self.prompting
            .clone()
            .unwrap_or_else(|| PromptConfig::for_source(self.dataset.preset.source()))
    }
}
