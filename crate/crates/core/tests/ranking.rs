use std::collections::BTreeSet;

use mmrec_core::eval::{aggregate_splits, metrics_at_k, rank_candidates, EvalError};
use proptest::prelude::*;

/// Reference computation from the list of relevant ranks.
fn oracle(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> (f64, f64, f64) {
    let hit_ranks: Vec<usize> = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(*i))
        .map(|(r, _)| r + 1)
        .collect();
    let dcg: f64 = hit_ranks.iter().map(|&r| 1.0 / (r as f64 + 1.0).log2()).sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(|r| 1.0 / (r as f64 + 1.0).log2()).sum();
    let hits = hit_ranks.len() as f64;
    (hits / k as f64, hits / relevant.len() as f64, dcg / ideal)
}

proptest! {
    #[test]
    fn metrics_match_reference(
        scores in prop::collection::vec(0u8..20, 1..60),
        relevant_mask in prop::collection::vec(any::<bool>(), 60),
        k in 1usize..30,
    ) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("c{i:03}")).collect();
        let pairs: Vec<(&str, f64)> = ids.iter().map(String::as_str).zip(scores.iter().map(|&s| s as f64)).collect();
        let relevant: BTreeSet<String> = ids.iter().zip(&relevant_mask).filter(|(_, m)| **m).map(|(i, _)| i.clone()).collect();
        prop_assume!(!relevant.is_empty());
        let ranking = rank_candidates(&pairs).unwrap();
        for w in ranking.windows(2) {
            let s = |id: &str| pairs.iter().find(|p| p.0 == id).unwrap().1;
            prop_assert!(s(w[0]) > s(w[1]) || (s(w[0]) == s(w[1]) && w[0] < w[1]));
        }
        let rel: BTreeSet<&str> = relevant.iter().map(String::as_str).collect();
        let m = metrics_at_k(&ranking, &rel, k).unwrap();
        let owned: Vec<String> = ranking.iter().map(|s| s.to_string()).collect();
        let (p, r, n) = oracle(&owned, &relevant, k);
        prop_assert!((m.precision - p).abs() < 1e-12);
        prop_assert!((m.recall - r).abs() < 1e-12);
        prop_assert!((m.ndcg - n).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m.ndcg));
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let rel: BTreeSet<&str> = ["a"].into_iter().collect();
    assert!(matches!(metrics_at_k(&["a"], &rel, 0), Err(EvalError::InvalidK)));
    assert!(matches!(metrics_at_k(&["a"], &BTreeSet::new(), 5), Err(EvalError::EmptyRelevant)));
    assert!(matches!(rank_candidates(&[]), Err(EvalError::EmptyCandidates)));
    assert!(matches!(rank_candidates(&[("x", f64::NAN)]), Err(EvalError::NanScore(_))));
    assert!(aggregate_splits(&[]).is_err());
}

#[test]
fn perfect_ranking_scores_one() {
    let rel: BTreeSet<&str> = ["a", "b"].into_iter().collect();
    let m = metrics_at_k(&["a", "b", "c", "d"], &rel, 2).unwrap();
    assert_eq!((m.precision, m.recall, m.ndcg), (1.0, 1.0, 1.0));
}
