//! Planted-affinity synthetic catalogue.
//!
//! Items carry two topics in their description text and one topic encoded
//! in the image reference, so models that see image content have more
//! signal than description-only ones. Each user weights a main and a
//! secondary topic; a user's interactions are the items with the highest
//! affinity (topic preference, optional popularity boost and small noise).

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{ImplicitDataset, Interaction, Item, Source};
use crate::rng::stream;

const FILLER: [&str; 24] = [
    "classic", "edition", "bundle", "deluxe", "series", "volume", "standard", "compact", "portable", "premium",
    "basic", "extended", "original", "modern", "vintage", "special", "limited", "annual", "global", "local",
    "rapid", "simple", "smart", "prime",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub min_items_per_user: usize,
    pub max_items_per_user: usize,
    /// Weight of the item popularity latent in the affinity.
    pub popularity_skew: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 200,
            n_items: 300,
            n_topics: 10,
            words_per_topic: 4,
            min_items_per_user: 15,
            max_items_per_user: 25,
            popularity_skew: 0.0,
            noise: 0.05,
            seed: 7,
        }
    }
}

fn topic_word(topic: usize, w: usize) -> String {
    const STEMS: [&str; 12] = [
        "astro", "botan", "culin", "draco", "equus", "flora", "geode", "helio", "ignis", "jovia", "kelpo", "lumen",
    ];
    format!("{}{}", STEMS[topic % STEMS.len()], topic / STEMS.len() * 10 + w)
}

pub fn generate(config: &SyntheticConfig) -> ImplicitDataset {
    assert!(config.n_topics >= 3, "need at least three topics");
    assert!(config.min_items_per_user <= config.max_items_per_user);
    let mut rng = stream(config.seed, &["synthetic"]);

    let mut items = BTreeMap::new();
    let mut item_topics = Vec::with_capacity(config.n_items);
    let mut popularity = Vec::with_capacity(config.n_items);
    for i in 0..config.n_items {
        let id = format!("item{i:04}");
        let topics: Vec<usize> = index::sample(&mut rng, config.n_topics, 3).into_vec();
        let mut words: Vec<String> = Vec::new();
        for &t in &topics[..2] {
            for w in index::sample(&mut rng, config.words_per_topic, 2) {
                words.push(topic_word(t, w));
            }
        }
        for _ in 0..3 {
            words.push(FILLER.choose(&mut rng).expect("nonempty").to_string());
        }
        words.shuffle(&mut rng);
        let image_words: Vec<String> = index::sample(&mut rng, config.words_per_topic, 2)
            .into_iter()
            .map(|w| topic_word(topics[2], w))
            .collect();
        items.insert(
            id.clone(),
            Item {
                item_id: id.clone(),
                title: format!("Item {i}"),
                description: words.join(" "),
                image_ref: Some(format!("synthetic://image/{id}/{}", image_words.join("-"))),
                source: Source::Synthetic,
            },
        );
        item_topics.push(topics);
        let u: f64 = rng.gen();
        popularity.push(u.powi(3));
    }

    let ids: Vec<String> = items.keys().cloned().collect();
    let mut interactions = Vec::new();
    for u in 0..config.n_users {
        let user = format!("user{u:04}");
        let mut pref = vec![0.0; config.n_topics];
        let liked = index::sample(&mut rng, config.n_topics, 2);
        pref[liked.index(0)] = 1.0;
        pref[liked.index(1)] = 0.6;
        let m = rng.gen_range(config.min_items_per_user..=config.max_items_per_user);
        let mut scored: Vec<(f64, usize)> = (0..config.n_items)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                let a = item_topics[i].iter().map(|&t| pref[t]).sum::<f64>()
                    + config.popularity_skew * popularity[i]
                    + config.noise * z;
                (a, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in scored.iter().take(m) {
            interactions.push(Interaction::observed(user.clone(), ids[i].clone()));
        }
    }
    ImplicitDataset {
        source: Source::Synthetic,
        items,
        interactions,
    }
}
