use std::sync::atomic::{AtomicUsize, Ordering};

use mmrec_core::embedding::{
    concat, cosine, split, CachedEmbedder, EmbeddingError, EmbeddingVector, HashEmbedder, RepresentationSet,
    TextEmbedder,
};
use proptest::prelude::*;

struct Counting {
    inner: HashEmbedder,
    calls: AtomicUsize,
}

impl Counting {
    fn new(dim: usize) -> Self {
        Counting {
            inner: HashEmbedder::new(dim),
            calls: AtomicUsize::new(0),
        }
    }
}

impl TextEmbedder for Counting {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}

#[test]
fn store_encodes_each_text_once_across_reopens() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.csv");
    let texts = ["red fox", "blue whale", "red fox", "green tea"];
    let first: Vec<EmbeddingVector> = {
        let store = CachedEmbedder::open(Counting::new(24), &path).unwrap();
        let out = texts.iter().map(|t| store.embed(t).unwrap()).collect();
        assert_eq!(store.inner().calls.load(Ordering::SeqCst), 3);
        out
    };
    let store = CachedEmbedder::open(Counting::new(24), &path).unwrap();
    for (t, v) in texts.iter().zip(&first) {
        assert_eq!(store.embed(t).unwrap().values, v.values);
    }
    assert_eq!(store.inner().calls.load(Ordering::SeqCst), 0);
    assert_eq!(store.len(), 3);
}

#[test]
fn store_rejects_a_different_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.csv");
    CachedEmbedder::open(HashEmbedder::new(8), &path).unwrap();
    assert!(matches!(
        CachedEmbedder::open(HashEmbedder::new(16), &path),
        Err(EmbeddingError::DimMismatch { expected: 16, actual: 8, .. })
    ));
}

#[test]
fn representation_set_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..5).map(|i| format!("item{i}")).collect();
    let values: Vec<f32> = (0..15).map(|v| v as f32 * 0.5 - 3.0).collect();
    let set = RepresentationSet::from_rows("text", "hash", 3, ids, values).unwrap();
    set.write(dir.path()).unwrap();
    let back = RepresentationSet::read(dir.path(), "text").unwrap();
    assert_eq!(back, set);
    assert_eq!(back.get("item2"), Some(&[0.0f32, 0.5, 1.0][..]));
}

fn vector(max: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1e3f32..1e3, 1..max)
}

proptest! {
    #[test]
    fn concat_then_split_is_lossless(parts in prop::collection::vec(vector(40), 1..5)) {
        let vs: Vec<EmbeddingVector> = parts.iter().map(|p| EmbeddingVector::new(p.clone(), "m").unwrap()).collect();
        let refs: Vec<&EmbeddingVector> = vs.iter().collect();
        let joined = concat(&refs);
        let dims: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert_eq!(joined.dim(), dims.iter().sum::<usize>());
        let back = split(&joined, &dims).unwrap();
        for (a, b) in back.iter().zip(&parts) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(a in vector(30), scale in 0.1f32..10.0) {
        let b: Vec<f32> = a.iter().rev().map(|v| v * scale).collect();
        let (va, vb) = (EmbeddingVector::new(a.clone(), "m").unwrap(), EmbeddingVector::new(b, "m").unwrap());
        match (cosine(&va, &vb), cosine(&vb, &va)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
                prop_assert!((x - y).abs() < 1e-12);
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "asymmetric result {:?}", other),
        }
    }

    #[test]
    fn hash_embedding_is_a_pure_function(text in "[a-z ]{0,60}") {
        let e = HashEmbedder::new(32);
        prop_assert_eq!(e.embed(&text).unwrap(), e.embed(&text).unwrap());
        prop_assert_eq!(e.embed(&text).unwrap().dim(), 32);
    }
}
