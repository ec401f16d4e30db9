use std::collections::HashMap;

use mmrec_core::corpus::{build_eval_candidates, k_core_filter, split_per_user, DatasetSplits, Partition, SplitRatios};
use mmrec_core::embedding::{build_representations, Combo, HashEmbedder, ItemRecords, RepresentationSet};
use mmrec_core::eval::{evaluate, RandomScorer};
use mmrec_core::gateway::{enrich_corpus, EnrichOptions, MockBackend, ResponseCache};
use mmrec_core::recsys::{
    adamw_update, grid_search, init_params_with, load_checkpoint, save_checkpoint, train, AdamW, Example, GradScale,
    Grid, Hyperparams, ModelScorer, Tensors,
};
use mmrec_core::synthetic::{generate, SyntheticConfig};
use proptest::prelude::*;

fn fixture(combo: &str) -> (DatasetSplits, RepresentationSet) {
    let ds = generate(&SyntheticConfig {
        n_users: 80,
        n_items: 120,
        min_items_per_user: 12,
        max_items_per_user: 18,
        ..SyntheticConfig::default()
    });
    let ds = k_core_filter(&ds, 5).unwrap();
    let items: Vec<_> = ds.items.values().cloned().collect();
    let combo: Combo = combo.parse().unwrap();
    let backend = MockBackend::new("mock");
    let cache = ResponseCache::in_memory();
    let mut records: HashMap<String, ItemRecords> = HashMap::new();
    for s in combo.strategies() {
        let rep = enrich_corpus(&items, s, &backend, &cache, None, &EnrichOptions::default()).unwrap();
        for r in rep.records {
            records.entry(r.item_id.clone()).or_default().insert(s, r);
        }
    }
    let reprs = build_representations(&combo, &items, &records, None, &HashEmbedder::new(32), 1).unwrap();
    let mut splits = split_per_user(&ds, SplitRatios::MOVIELENS, 0).unwrap();
    splits.eval_candidates = build_eval_candidates(&splits, 50, 0).0;
    (splits, reprs)
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        batch_size: 128,
        hidden: 32,
        max_epochs: 30,
        eval_every: 5,
        learning_rate: 0.003,
        ..Hyperparams::default()
    }
}

#[test]
fn model_beats_random_on_planted_affinity() {
    let (splits, reprs) = fixture("text");
    let (params, report) = train(&splits, &reprs, &small_hp()).unwrap();
    let model = evaluate(&ModelScorer::new(&params, &reprs).unwrap(), &splits, Partition::Test, 10, 1).unwrap();
    let random = evaluate(&RandomScorer { seed: 3 }, &splits, Partition::Test, 10, 1).unwrap();
    assert!(model.recall > 2.0 * random.recall, "model {} vs random {}", model.recall, random.recall);
    assert!(report.best_val_recall >= report.curve[0].val_recall);
    assert!(report.curve.windows(2).all(|w| w[0].epoch < w[1].epoch));
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let (splits, reprs) = fixture("x_reflect");
    let hp = Hyperparams {
        max_epochs: 6,
        eval_every: 3,
        ..small_hp()
    };
    let (a, ra) = train(&splits, &reprs, &hp).unwrap();
    let (b, rb) = train(&splits, &reprs, &hp).unwrap();
    assert_eq!(a.tensors, b.tensors);
    assert_eq!(ra, rb);

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &a, &hp, ra.best_epoch, "x_reflect").unwrap();
    let (loaded, meta) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.tensors, a.tensors);
    assert_eq!(meta.hyperparams, hp);
    assert_eq!(meta.combo_tag, "x_reflect");

    let other = train(&splits, &reprs, &Hyperparams { seed: 5, ..hp }).unwrap().0;
    assert_ne!(other.tensors, a.tensors);
}

#[test]
fn early_stopping_respects_patience() {
    let (splits, reprs) = fixture("text");
    let hp = Hyperparams {
        learning_rate: 1e-7,
        eval_every: 1,
        patience: 2,
        max_epochs: 50,
        ..small_hp()
    };
    let (_, report) = train(&splits, &reprs, &hp).unwrap();
    if report.stopped_early {
        let last = report.curve.last().unwrap().epoch;
        assert!(last >= report.best_epoch + hp.patience);
        assert!(report.epochs_run < hp.max_epochs);
    } else {
        assert_eq!(report.epochs_run, hp.max_epochs);
    }
}

#[test]
fn grid_search_reports_every_point() {
    let (splits, reprs) = fixture("text");
    let grid = Grid {
        learning_rates: vec![0.001, 0.003],
        dropouts: vec![0.1, 0.3],
    };
    let base = Hyperparams {
        max_epochs: 4,
        eval_every: 2,
        ..small_hp()
    };
    let result = grid_search(&splits, &reprs, &grid, &base).unwrap();
    assert_eq!(result.reports.len(), 4);
    let best = result.reports[result.best_index].best_val_recall;
    assert!(result.reports.iter().all(|r| r.best_val_recall <= best));
}

fn config() -> impl Strategy<Value = (usize, usize, usize, u64, bool)> {
    (1usize..6, 1usize..6, 1usize..5, any::<u64>(), any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_central_differences((d, h, o, seed, mean) in config()) {
        let users: Vec<String> = (0..3).map(|u| format!("u{u}")).collect();
        let mut params = init_params_with::<f64>(users, d, h, o, seed);
        // Push biases off zero so ReLU kinks are unlikely at h = 1e-5.
        for (i, b) in params.tensors.b1.iter_mut().enumerate() {
            *b = 0.3 + 0.1 * i as f64;
        }
        for u in params.tensors.user_table.iter_mut() {
            *u *= 50.0;
        }
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|n| (0..d).map(|i| ((n * 7 + i * 3) % 5) as f64 * 0.25 - 0.4).collect())
            .collect();
        let masks: Vec<Vec<f64>> = (0..4)
            .map(|n| (0..d).map(|i| if (n + i + seed as usize) % 3 == 0 { 0.0 } else { 1.25 }).collect())
            .collect();
        let batch: Vec<Example<f64>> = xs
            .iter()
            .enumerate()
            .map(|(n, x)| Example { user: n % 3, item: x, label: (n % 2) as f64 })
            .collect();
        let scale = if mean { GradScale::Mean } else { GradScale::Sum };
        let mut grads = Tensors::zeros_like(&params.tensors);
        params.loss_and_grads(&batch, Some(&masks), scale, &mut grads);
        let divisor = if mean { batch.len() as f64 } else { 1.0 };

        let step = 1e-5;
        let analytic: Vec<f64> = grads.parts().iter().flat_map(|(t, _)| t.to_vec()).collect();
        let mut idx = 0;
        for part in 0..5 {
            let len = params.tensors.parts()[part].0.len();
            for j in 0..len {
                let bump = |p: &mut mmrec_core::recsys::TwoTowerParams<f64>, delta: f64| {
                    p.tensors.parts_mut()[part].0[j] += delta;
                };
                let mut plus = params.clone();
                bump(&mut plus, step);
                let mut minus = params.clone();
                bump(&mut minus, -step);
                let numeric = (plus.loss(&batch, Some(&masks)) - minus.loss(&batch, Some(&masks))) / (2.0 * step) / divisor;
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                prop_assert!(rel < 1e-4, "part {} index {}: analytic {} numeric {}", part, j, a, numeric);
                idx += 1;
            }
        }
    }

    #[test]
    fn adamw_matches_closed_form(
        theta0 in -5.0f64..5.0,
        grads in prop::collection::vec(-3.0f64..3.0, 1..8),
        decay in any::<bool>(),
    ) {
        let opt = AdamW { lr: 0.01, weight_decay: 0.05, ..AdamW::default() };
        let (mut theta, mut m, mut v) = ([theta0], [0.0], [0.0]);
        let (mut et, mut em, mut ev) = (theta0, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = t as u64 + 1;
            adamw_update(&mut theta, &[*g], &mut m, &mut v, t, &opt, decay);
            em = opt.beta1 * em + (1.0 - opt.beta1) * g;
            ev = opt.beta2 * ev + (1.0 - opt.beta2) * g * g;
            let mh = em / (1.0 - opt.beta1.powi(t as i32));
            let vh = ev / (1.0 - opt.beta2.powi(t as i32));
            let wd = if decay { opt.weight_decay * et } else { 0.0 };
            et -= opt.lr * (mh / (vh.sqrt() + opt.epsilon) + wd);
            prop_assert!((theta[0] - et).abs() <= 1e-12 * et.abs().max(1.0));
        }
    }
}
