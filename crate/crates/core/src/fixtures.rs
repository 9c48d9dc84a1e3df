//! Small deterministic fixtures shared by unit, integration and acceptance
//! tests.

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{cosine, EmbeddingModel, TrainingDoc};

pub const TOPIC_A: [&str; 12] = [
    "murder", "detective", "police", "crime", "victim", "killer", "alibi", "suspect", "evidence", "witness",
    "forensic", "inspector",
];
pub const TOPIC_B: [&str; 12] = [
    "garden", "flower", "spring", "blossom", "meadow", "seedling", "harvest", "orchard", "tulip", "compost",
    "greenhouse", "pollen",
];

/// Twenty documents, ten per topic, with disjoint vocabularies. Isbns start
/// with `a` or `b` according to the topic. Each document favors its own
/// ordering of the topic words (Zipf weights over a shuffled vocabulary).
pub fn two_topic_docs() -> Vec<TrainingDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut docs = Vec::with_capacity(20);
    let weights: Vec<f64> = (1..=TOPIC_A.len()).map(|r| 1.0 / r as f64).collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    for (prefix, vocab) in [("a", &TOPIC_A), ("b", &TOPIC_B)] {
        for i in 0..10 {
            let len = rng.random_range(80..=120);
            let mut order: Vec<&str> = vocab.to_vec();
            order.shuffle(&mut rng);
            let tokens = (0..len).map(|_| order[zipf.sample(&mut rng)].to_string()).collect();
            docs.push(TrainingDoc {
                isbn: format!("{prefix}{i:02}"),
                tokens,
            });
        }
    }
    docs
}

/// Mean pairwise cosine of trained document vectors within a topic and
/// across topics.
pub fn topic_separation(model: &EmbeddingModel) -> (f64, f64) {
    let docs: Vec<(&str, &[f64])> = model.doc_vectors().collect();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            let c = cosine(docs[i].1, docs[j].1).expect("equal dims");
            if docs[i].0[..1] == docs[j].0[..1] {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    (within / nw.max(1) as f64, cross / nc.max(1) as f64)
}
