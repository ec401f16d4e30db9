use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, init_params, AdamState, Example, Hyperparams, RecsysError, Tensors, TwoTowerParams};
use crate::corpus::{sample_train_negatives, DatasetSplits, Partition};
use crate::embedding::RepresentationSet;
use crate::eval::{evaluate, EvalError, Scorer, SplitReport};
use crate::rng::{derive_seed, stream};

/// Scores candidates with a trained model. Item-tower outputs are computed
/// once per item.
pub struct ModelScorer<'a> {
    params: &'a TwoTowerParams<f32>,
    item_embs: HashMap<&'a str, Vec<f32>>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a TwoTowerParams<f32>, reprs: &'a RepresentationSet) -> Result<Self, RecsysError> {
        let mut item_embs = HashMap::with_capacity(reprs.len());
        for id in &reprs.item_ids {
            let x = reprs.get(id).expect("listed item has a row");
            item_embs.insert(id.as_str(), params.item_embedding(x)?);
        }
        Ok(ModelScorer { params, item_embs })
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, user: &str, items: &[&str]) -> Result<Vec<f64>, EvalError> {
        let u = self
            .params
            .user_index(user)
            .map_err(|e| EvalError::Scorer(e.to_string()))?;
        items
            .iter()
            .map(|i| {
                self.item_embs
                    .get(i)
                    .map(|e| self.params.score_embedding(u, e) as f64)
                    .ok_or_else(|| EvalError::Scorer(format!("no representation for item {i}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub val_recall: f64,
    /// Mean per-example training loss of the epoch (absent at epoch 0).
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EvalPoint>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub hyperparams: Hyperparams,
}

fn check_coverage(splits: &DatasetSplits, reprs: &RepresentationSet) -> Result<(), RecsysError> {
    let all = splits
        .catalog
        .iter()
        .map(String::as_str)
        .chain(splits.train.iter().chain(&splits.val).chain(&splits.test).map(|i| i.item_id.as_str()))
        .chain(splits.eval_candidates.values().flatten().map(String::as_str));
    for item in all {
        if !reprs.contains(item) {
            return Err(RecsysError::MissingRepresentation(item.to_string()));
        }
    }
    Ok(())
}

fn validation_recall(
    params: &TwoTowerParams<f32>,
    splits: &DatasetSplits,
    reprs: &RepresentationSet,
    k: usize,
) -> Result<f64, RecsysError> {
    let scorer = ModelScorer::new(params, reprs)?;
    let report: SplitReport = evaluate(&scorer, splits, Partition::Validation, k, 1)?;
    Ok(report.recall)
}

/// Trains with early stopping on validation Recall@K and returns the
/// parameters of the best evaluation.
pub fn train(
    splits: &DatasetSplits,
    reprs: &RepresentationSet,
    hp: &Hyperparams,
) -> Result<(TwoTowerParams<f32>, TrainReport), RecsysError> {
    hp.validate()?;
    check_coverage(splits, reprs)?;
    if splits.train.is_empty() {
        return Err(RecsysError::EmptyTrainingSet);
    }
    let users: Vec<String> = splits.users().into_iter().map(String::from).collect();
    let mut params: TwoTowerParams<f32> = init_params(users, reprs.dim, hp.hidden, hp.seed);
    let opt = hp.optimizer();
    let mut state = AdamState::new(&params);
    let mut grads = Tensors::zeros_like(&params.tensors);

    let positives: Vec<(usize, &[f32])> = splits
        .train
        .iter()
        .map(|i| {
            Ok((
                params.user_index(&i.user_id)?,
                reprs.get(&i.item_id).expect("coverage checked"),
            ))
        })
        .collect::<Result<_, RecsysError>>()?;

    let mut curve = vec![EvalPoint {
        epoch: 0,
        val_recall: validation_recall(&params, splits, reprs, hp.eval_k)?,
        train_loss: None,
    }];
    let mut best = (curve[0].val_recall, 0usize, params.clone());
    let mut stale = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0;
    let keep = 1.0 - hp.dropout;

    for epoch in 1..=hp.max_epochs {
        let epoch_label = epoch.to_string();
        let (negatives, _) =
            sample_train_negatives(splits, hp.negative_ratio, derive_seed(hp.seed, &["negatives", &epoch_label]))?;
        let mut examples: Vec<Example<'_, f32>> = positives
            .iter()
            .map(|&(user, item)| Example { user, item, label: 1.0 })
            .collect();
        for n in &negatives {
            examples.push(Example {
                user: params.user_index(&n.user_id)?,
                item: reprs.get(&n.item_id).expect("coverage checked"),
                label: 0.0,
            });
        }
        examples.shuffle(&mut stream(hp.seed, &["shuffle", &epoch_label]));

        let mut drop_rng = stream(hp.seed, &["dropout", &epoch_label]);
        let mut total = 0.0;
        for batch in examples.chunks(hp.batch_size) {
            let masks: Option<Vec<Vec<f32>>> = (hp.dropout > 0.0).then(|| {
                let scale = (1.0 / keep) as f32;
                batch
                    .iter()
                    .map(|_| {
                        (0..reprs.dim)
                            .map(|_| if drop_rng.gen::<f64>() < keep { scale } else { 0.0 })
                            .collect()
                    })
                    .collect()
            });
            total += params.loss_and_grads(batch, masks.as_deref(), hp.grad_scale, &mut grads);
            adamw_step(&mut params, &grads, &mut state, &opt);
        }
        epochs_run = epoch;
        let mean_loss = total / examples.len() as f64;
        debug!("epoch {epoch}: mean loss {mean_loss:.6}");

        if epoch % hp.eval_every == 0 {
            let recall = validation_recall(&params, splits, reprs, hp.eval_k)?;
            curve.push(EvalPoint {
                epoch,
                val_recall: recall,
                train_loss: Some(mean_loss),
            });
            if recall > best.0 {
                best = (recall, epoch, params.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= hp.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    info!(
        "lr={} dropout={}: best val recall@{} {:.4} at epoch {}",
        hp.learning_rate, hp.dropout, hp.eval_k, best.0, best.1
    );
    let report = TrainReport {
        curve,
        best_epoch: best.1,
        best_val_recall: best.0,
        stopped_early,
        epochs_run,
        hyperparams: hp.clone(),
    };
    Ok((best.2, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            learning_rates: vec![0.0001, 0.0005, 0.001],
            dropouts: vec![0.1, 0.3, 0.5],
        }
    }
}

impl Grid {
    pub fn points(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &p in &self.dropouts {
                out.push(Hyperparams {
                    learning_rate: lr,
                    dropout: p,
                    ..base.clone()
                });
            }
        }
        out
    }
}

/// Index of the best (validation recall, lr, dropout) triple: highest
/// recall, ties to the lower learning rate, then the lower dropout.
pub fn select_best(candidates: &[(f64, f64, f64)]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| {
        let (ra, la, da) = candidates[a];
        let (rb, lb, db) = candidates[b];
        rb.total_cmp(&ra).then(la.total_cmp(&lb)).then(da.total_cmp(&db))
    })
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_index: usize,
    pub reports: Vec<TrainReport>,
    pub best_params: TwoTowerParams<f32>,
}

impl GridResult {
    pub fn best_hp(&self) -> &Hyperparams {
        &self.reports[self.best_index].hyperparams
    }
}

/// Trains every (learning rate, dropout) pair and keeps the best model.
pub fn grid_search(
    splits: &DatasetSplits,
    reprs: &RepresentationSet,
    grid: &Grid,
    base: &Hyperparams,
) -> Result<GridResult, RecsysError> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(RecsysError::InvalidHyperparams("empty grid".into()));
    }
    let mut reports = Vec::with_capacity(points.len());
    let mut best: Option<(usize, TwoTowerParams<f32>)> = None;
    for hp in &points {
        let (params, report) = train(splits, reprs, hp)?;
        reports.push(report);
        let keyed: Vec<(f64, f64, f64)> = reports
            .iter()
            .map(|r| (r.best_val_recall, r.hyperparams.learning_rate, r.hyperparams.dropout))
            .collect();
        let idx = select_best(&keyed).expect("nonempty");
        if idx == reports.len() - 1 {
            best = Some((idx, params));
        }
    }
    let (best_index, best_params) = best.expect("at least one point trained");
    Ok(GridResult {
        best_index,
        reports,
        best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_ties() {
        assert_eq!(select_best(&[(0.1, 0.001, 0.1), (0.3, 0.001, 0.5), (0.2, 0.0001, 0.1)]), Some(1));
        assert_eq!(select_best(&[(0.3, 0.001, 0.1), (0.3, 0.0005, 0.5), (0.3, 0.0005, 0.3)]), Some(2));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn grid_points() {
        let pts = Grid::default().points(&Hyperparams::default());
        assert_eq!(pts.len(), 9);
        assert_eq!((pts[0].learning_rate, pts[0].dropout), (0.0001, 0.1));
        assert_eq!((pts[8].learning_rate, pts[8].dropout), (0.001, 0.5));
    }
}
