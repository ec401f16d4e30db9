use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetSplits, ImplicitDataset, Interaction};
use crate::rng::stream;

/// Fractions of each user's interactions assigned to train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const MOVIELENS: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };
    pub const AMAZON: SplitRatios = SplitRatios {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };

    pub fn validate(&self) -> Result<(), CorpusError> {
        let all = [self.train, self.val, self.test];
        let ok = all.iter().all(|r| r.is_finite() && *r > 0.0)
            && ((self.train + self.val + self.test) - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidRatios(all))
        }
    }

    /// (train, val, test) sizes for a user with `n` interactions.
    ///
    /// Validation and test each get `max(1, round(ratio * n))`; train takes
    /// the remainder and must keep at least one interaction.
    pub fn counts(&self, n: usize) -> Option<(usize, usize, usize)> {
        let held = |r: f64| ((r * n as f64).round() as usize).max(1);
        let (val, test) = (held(self.val), held(self.test));
        (val + test < n).then(|| (n - val - test, val, test))
    }
}

/// Randomly partitions each user's interactions, seeded per user.
pub fn split_per_user(
    dataset: &ImplicitDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplits, CorpusError> {
    ratios.validate()?;
    let mut by_user: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for i in &dataset.interactions {
        by_user.entry(&i.user_id).or_default().push(&i.item_id);
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (user, items) in by_user.iter_mut() {
        items.sort_unstable();
        items.dedup();
        let n = items.len();
        let (_, n_val, n_test) = ratios
            .counts(n)
            .filter(|_| n >= 3)
            .ok_or_else(|| CorpusError::TooFewInteractions {
                user: user.to_string(),
                count: n,
            })?;
        let mut rng = stream(seed, &["split", user]);
        items.shuffle(&mut rng);
        for (pos, item) in items.iter().enumerate() {
            let inter = Interaction::observed(*user, *item);
            if pos < n_test {
                test.push(inter);
            } else if pos < n_test + n_val {
                val.push(inter);
            } else {
                train.push(inter);
            }
        }
    }
    let catalog: Vec<String> = dataset
        .items
        .keys()
        .cloned()
        .chain(dataset.interactions.iter().map(|i| i.item_id.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(DatasetSplits {
        train,
        val,
        test,
        eval_candidates: BTreeMap::new(),
        catalog,
        seed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    /// Users for whom fewer than `n` unobserved items existed, with the
    /// number actually sampled.
    pub short_users: Vec<(String, usize)>,
}

/// Samples, per user with validation or test positives, `n` catalogue items
/// the user never interacted with. The stored candidate list is the user's
/// held-out positives followed by those samples.
pub fn build_eval_candidates(
    splits: &DatasetSplits,
    n: usize,
    seed: u64,
) -> (BTreeMap<String, Vec<String>>, CandidateReport) {
    let observed = splits.observed_items();
    let val_pos = splits.positives(super::Partition::Validation);
    let test_pos = splits.positives(super::Partition::Test);
    let held_users: BTreeSet<&str> = val_pos.keys().chain(test_pos.keys()).copied().collect();

    let mut report = CandidateReport::default();
    let mut out = BTreeMap::new();
    for user in held_users {
        let seen = &observed[user];
        let eligible: Vec<&str> = splits
            .catalog
            .iter()
            .map(String::as_str)
            .filter(|i| !seen.contains(i))
            .collect();
        let take = n.min(eligible.len());
        if take < n {
            warn!("user {user}: only {take} unobserved items available for {n} eval negatives");
            report.short_users.push((user.to_string(), take));
        }
        let mut rng = stream(seed, &["eval_candidates", user]);
        let mut cands: Vec<String> = Vec::with_capacity(take + 4);
        for set in [val_pos.get(user), test_pos.get(user)].into_iter().flatten() {
            cands.extend(set.iter().map(|s| s.to_string()));
        }
        cands.extend(
            index::sample(&mut rng, eligible.len(), take)
                .into_iter()
                .map(|idx| eligible[idx].to_string()),
        );
        out.insert(user.to_string(), cands);
    }
    (out, report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NegativeReport {
    /// Users with no eligible negative item.
    pub skipped_users: Vec<String>,
}

/// Draws `ratio` pseudo-negatives per training positive.
///
/// Negatives are drawn uniformly, with replacement, from items the user has
/// no observed interaction with in any split and which are not among the
/// user's evaluation candidates.
pub fn sample_train_negatives(
    splits: &DatasetSplits,
    ratio: usize,
    rng_seed: u64,
) -> Result<(Vec<Interaction>, NegativeReport), CorpusError> {
    if ratio == 0 {
        return Err(CorpusError::InvalidArgument(
            "negative ratio must be at least 1".into(),
        ));
    }
    let observed = splits.observed_items();
    let mut train_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in &splits.train {
        *train_counts.entry(&i.user_id).or_default() += 1;
    }
    let mut report = NegativeReport::default();
    let mut out = Vec::with_capacity(splits.train.len() * ratio);
    for (user, positives) in train_counts {
        let seen = &observed[user];
        let held: BTreeSet<&str> = splits
            .eval_candidates
            .get(user)
            .map(|c| c.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let eligible: Vec<&str> = splits
            .catalog
            .iter()
            .map(String::as_str)
            .filter(|i| !seen.contains(i) && !held.contains(i))
            .collect();
        if eligible.is_empty() {
            warn!("user {user} has no eligible negative items; skipped");
            report.skipped_users.push(user.to_string());
            continue;
        }
        let mut rng = stream(rng_seed, &["train_negatives", user]);
        for _ in 0..positives * ratio {
            let item = eligible[rng.gen_range(0..eligible.len())];
            out.push(Interaction::pseudo_negative(user, item));
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Item, Origin, Partition, Source};
    use std::collections::HashSet;

    fn dataset(per_user: &[usize], n_items: usize) -> ImplicitDataset {
        let mut items = BTreeMap::new();
        for i in 0..n_items {
            let id = format!("i{i:04}");
            items.insert(id.clone(), Item::stub(id, Source::Synthetic));
        }
        let mut interactions = Vec::new();
        for (u, &n) in per_user.iter().enumerate() {
            for j in 0..n {
                let item = (u * 7 + j) % n_items;
                let inter = Interaction::observed(format!("u{u:03}"), format!("i{item:04}"));
                if !interactions.contains(&inter) {
                    interactions.push(inter);
                }
            }
        }
        ImplicitDataset {
            source: Source::Synthetic,
            items,
            interactions,
        }
    }

    fn counts(splits: &DatasetSplits, user: &str) -> (usize, usize, usize) {
        let c = |p: Partition| splits.partition(p).iter().filter(|i| i.user_id == user).count();
        (c(Partition::Train), c(Partition::Validation), c(Partition::Test))
    }

    #[test]
    fn ratio_counts() {
        let ds = dataset(&[10], 50);
        let s = split_per_user(&ds, SplitRatios::MOVIELENS, 3).unwrap();
        assert_eq!(counts(&s, "u000"), (8, 1, 1));

        let ds = dataset(&[5], 50);
        let s = split_per_user(&ds, SplitRatios::AMAZON, 3).unwrap();
        assert_eq!(counts(&s, "u000"), (3, 1, 1));
    }

    #[test]
    fn counts_by_enumeration() {
        // Oracle: the rounding rule spelled out per n.
        for n in 3..60usize {
            for r in [SplitRatios::MOVIELENS, SplitRatios::AMAZON] {
                let (t, v, te) = r.counts(n).unwrap();
                let v_exp = std::cmp::max(1, (r.val * n as f64 + 0.5).floor() as usize);
                let te_exp = std::cmp::max(1, (r.test * n as f64 + 0.5).floor() as usize);
                assert_eq!((v, te), (v_exp, te_exp), "n={n}");
                assert_eq!(t + v + te, n);
                assert!(t >= 1);
            }
        }
    }

    #[test]
    fn too_few_interactions() {
        let ds = dataset(&[2], 10);
        assert!(matches!(
            split_per_user(&ds, SplitRatios::MOVIELENS, 0),
            Err(CorpusError::TooFewInteractions { count: 2, .. })
        ));
    }

    #[test]
    fn deterministic_and_partitioning() {
        let ds = dataset(&[12, 7, 30, 5], 60);
        let a = split_per_user(&ds, SplitRatios::MOVIELENS, 11).unwrap();
        let b = split_per_user(&ds, SplitRatios::MOVIELENS, 11).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = split_per_user(&ds, SplitRatios::MOVIELENS, 12).unwrap();
        assert_ne!(a, c);

        let all: HashSet<_> = a.train.iter().chain(&a.val).chain(&a.test).collect();
        let orig: HashSet<_> = ds.interactions.iter().collect();
        assert_eq!(all, orig);
        assert_eq!(a.train.len() + a.val.len() + a.test.len(), ds.interactions.len());
    }

    #[test]
    fn invalid_ratios() {
        let ds = dataset(&[10], 20);
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(matches!(split_per_user(&ds, bad, 0), Err(CorpusError::InvalidRatios(_))));
    }

    #[test]
    fn candidates_amazon_scale() {
        let ds = dataset(&[5], 1729);
        let mut s = split_per_user(&ds, SplitRatios::AMAZON, 0).unwrap();
        let (cands, report) = build_eval_candidates(&s, 1000, 5);
        // 1 val + 1 test positive here; add one more held-out positive to
        // mirror a user with three.
        assert_eq!(cands["u000"].len(), 2 + 1000);
        assert!(report.short_users.is_empty());

        s.test.push(Interaction::observed("u000", "i1700"));
        let (cands, _) = build_eval_candidates(&s, 1000, 5);
        assert_eq!(cands["u000"].len(), 1003);
        let set: HashSet<_> = cands["u000"].iter().collect();
        assert_eq!(set.len(), 1003);
    }

    #[test]
    fn candidates_n_zero_and_short_catalog() {
        let ds = dataset(&[5, 6], 12);
        let s = split_per_user(&ds, SplitRatios::AMAZON, 0).unwrap();
        let (cands, _) = build_eval_candidates(&s, 0, 1);
        let vp = s.positives(Partition::Validation);
        let tp = s.positives(Partition::Test);
        for (u, c) in &cands {
            let expected = vp.get(u.as_str()).map_or(0, |x| x.len()) + tp.get(u.as_str()).map_or(0, |x| x.len());
            assert_eq!(c.len(), expected);
        }
        let (cands, report) = build_eval_candidates(&s, 1000, 1);
        assert_eq!(report.short_users.len(), 2);
        assert_eq!(cands["u000"].len(), 2 + (12 - 5));
    }

    #[test]
    fn candidates_independent_per_user_and_reproducible() {
        let ds = dataset(&[5, 5], 400);
        let s = split_per_user(&ds, SplitRatios::AMAZON, 0).unwrap();
        let (a, _) = build_eval_candidates(&s, 50, 9);
        let (b, _) = build_eval_candidates(&s, 50, 9);
        assert_eq!(a, b);
        assert_ne!(a["u000"][2..], a["u001"][2..]);
    }

    #[test]
    fn forced_negative_choice() {
        let mut ds = dataset(&[], 0);
        for i in 0..6 {
            let id = format!("i{i}");
            ds.items.insert(id.clone(), Item::stub(id.clone(), Source::Synthetic));
            if i < 5 {
                ds.interactions.push(Interaction::observed("u", id));
            }
        }
        let s = split_per_user(&ds, SplitRatios::AMAZON, 0).unwrap();
        let (negs, report) = sample_train_negatives(&s, 2, 1).unwrap();
        assert!(report.skipped_users.is_empty());
        assert_eq!(negs.len(), s.train.len() * 2);
        assert!(negs.iter().all(|n| n.item_id == "i5" && n.label == 0));
    }

    #[test]
    fn negatives_count_and_labels() {
        let ds = dataset(&[30, 30, 40], 500);
        let mut s = split_per_user(&ds, SplitRatios::MOVIELENS, 0).unwrap();
        s.eval_candidates = build_eval_candidates(&s, 100, 0).0;
        let (negs, _) = sample_train_negatives(&s, 1, 4).unwrap();
        assert_eq!(negs.len(), s.train.len());
        assert!(negs.iter().all(|n| n.label == 0 && n.origin == Origin::PseudoNegative));
        for n in &negs {
            assert!(!s.eval_candidates[&n.user_id].contains(&n.item_id));
        }
        assert!(sample_train_negatives(&s, 0, 4).is_err());
    }

    #[test]
    fn user_with_every_item_is_skipped() {
        let ds = dataset(&[6, 3], 6);
        let s = split_per_user(&ds, SplitRatios::AMAZON, 0).unwrap();
        let (_, report) = sample_train_negatives(&s, 1, 0).unwrap();
        assert_eq!(report.skipped_users, vec!["u000".to_string()]);
    }
}
