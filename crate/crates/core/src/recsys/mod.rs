//! Two-tower implicit-feedback recommender.
//!
//! User tower: an embedding table. Item tower: inverted dropout on the frozen
//! content vector, a ReLU hidden layer and a linear projection. Both towers
//! emit 128-d vectors whose dot product is the interaction logit.

mod adamw;
mod checkpoint;
mod model;
mod train;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{adamw_step, adamw_update, AdamState, AdamW};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use model::{
    bce_loss, bce_loss_mean, init_params, init_params_with, sigmoid, Example, ForwardOutput, Tensors,
    TwoTowerParams, BCE_EPS, OUTPUT_DIM,
};
pub use train::{grid_search, select_best, train, EvalPoint, Grid, GridResult, ModelScorer, TrainReport};

/// Floating-point element type of model tensors.
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum RecsysError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("no representation for item {0}")]
    MissingRepresentation(String),
    #[error("item vector has dim {actual}, model expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("no training interactions")]
    EmptyTrainingSet,
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("checkpoint error on {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// How per-example gradients are reduced over a batch. The reported loss is
/// always the batch sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScale {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub negative_ratio: usize,
    pub eval_k: usize,
    pub grad_scale: GradScale,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.001,
            dropout: 0.1,
            weight_decay: 0.0005,
            batch_size: 4096,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eval_every: 5,
            patience: 5,
            max_epochs: 200,
            seed: 0,
            hidden: 256,
            negative_ratio: 1,
            eval_k: 10,
            grad_scale: GradScale::Mean,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), RecsysError> {
        let bad = |m: &str| Err(RecsysError::InvalidHyperparams(m.into()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.eval_every == 0 || self.patience == 0 {
            return bad("eval_every and patience must be at least 1");
        }
        if self.hidden == 0 || self.negative_ratio == 0 || self.eval_k == 0 {
            return bad("hidden, negative_ratio and eval_k must be at least 1");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}
