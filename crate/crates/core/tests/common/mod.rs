//! Independent brute-force implementations used as test oracles. Nothing here
//! calls into the code under test except the tokenizer and the data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tagrec::corpus::{Corpus, EBook, TagSource};
use tagrec::text::{preprocess, PreprocessConfig};
use tagrec::tfidf::{TextField, TfidfParams};

/// DCG straight from the definition, normalized by the DCG of a list that
/// puts every relevant tag first.
pub fn brute_ndcg(recommended: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let dcg = |rels: &[u32]| -> f64 {
        rels.iter()
            .take(k)
            .enumerate()
            .map(|(pos, &r)| (2f64.powi(r as i32) - 1.0) / ((pos + 2) as f64).log2())
            .sum()
    };
    let rels: Vec<u32> = recommended.iter().map(|t| u32::from(relevant.contains(t))).collect();
    let ideal = vec![1u32; relevant.len()];
    dcg(&rels) / dcg(&ideal)
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean of `1 - cos` over all ordered pairs `i != j`.
pub fn brute_diversity(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += 1.0 - cos(&vectors[i], &vectors[j]);
            }
        }
    }
    total / (n * (n - 1)) as f64
}

/// Tau-a from explicit concordant and discordant pair counts.
pub fn brute_kendall(a: &[String], b: &[String]) -> f64 {
    let rank_b = |x: &String| b.iter().position(|y| y == x).unwrap() as i64;
    let n = a.len();
    let (mut conc, mut disc) = (0i64, 0i64);
    for i in 0..n {
        for j in 0..n {
            if i < j {
                // a ranks a[i] above a[j]
                let s = (rank_b(&a[j]) - rank_b(&a[i])).signum();
                if s > 0 {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    (conc - disc) as f64 / (n * (n - 1) / 2) as f64
}

/// Raw TF-IDF vectors over a dense vocabulary.
pub struct DenseTfidf {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl DenseTfidf {
    pub fn build(corpus: &Corpus, field: TextField, params: TfidfParams, stopwords: &PreprocessConfig) -> Self {
        let cfg = PreprocessConfig {
            stopwords: stopwords.stopwords.clone(),
            min_word_length: params.min_word_length,
        };
        let docs: Vec<(String, Vec<String>)> = corpus
            .books()
            .map(|b| (b.isbn.clone(), preprocess(field.text(b), &cfg)))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        let n = docs.len() as f64;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for (_, toks) in &docs {
            for t in toks.iter().collect::<BTreeSet<_>>() {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let vocab: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= params.min_df.max(1)).collect();
        let mut vectors = BTreeMap::new();
        for (isbn, toks) in &docs {
            let v: Vec<f64> = vocab
                .iter()
                .map(|(term, d)| toks.iter().filter(|t| *t == term).count() as f64 * (n / *d as f64).ln())
                .collect();
            if v.iter().any(|&w| w > 0.0) {
                vectors.insert(isbn.clone(), v);
            }
        }
        DenseTfidf { vectors }
    }

    /// All books by cosine to `isbn`, best first, zero similarity dropped.
    pub fn ranked_neighbors(&self, isbn: &str) -> Vec<(String, f64)> {
        let Some(q) = self.vectors.get(isbn) else {
            return Vec::new();
        };
        let mut all: Vec<(String, f64)> = self
            .vectors
            .iter()
            .filter(|(other, _)| other.as_str() != isbn)
            .map(|(other, v)| (other.clone(), cos(q, v)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        all
    }
}

/// `W_t = |S_t| * Σ_{s in S_t} W_s` over the top-`n` neighbors, top-`k` tags
/// by weight then tag.
pub fn brute_eq1(neighbors: &[(String, f64)], corpus: &Corpus, source: TagSource, n: usize, k: usize) -> Vec<String> {
    let mut support: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (isbn, sim) in neighbors.iter().take(n) {
        for tag in corpus.get(isbn).unwrap().tags(source) {
            support.entry(tag.clone()).or_default().push(*sim);
        }
    }
    let mut scored: Vec<(String, f64)> = support
        .into_iter()
        .map(|(t, sims)| {
            let sum: f64 = sims.iter().sum();
            (t, sims.len() as f64 * sum)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(t, _)| t).collect()
}

const WORDS: [&str; 30] = [
    "harbor", "lantern", "mystic", "orchard", "pilgrim", "quarry", "ravine", "saddle", "timber", "umbrella", "velvet",
    "walnut", "yonder", "zephyr", "anchor", "beacon", "canyon", "dagger", "ember", "falcon", "glacier", "hollow",
    "island", "jasper", "kettle", "ledger", "meadow", "nectar", "oyster", "parlor",
];
const TAGS: [&str; 16] = [
    "crime", "romance", "history", "travel", "cooking", "science", "poetry", "war", "sea", "family", "horror", "humor",
    "magic", "music", "sport", "youth",
];

/// Random corpus of up to 50 books over a small vocabulary, with sparse
/// author, category and annotation coverage.
pub fn random_small_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..=50);
    let words = &WORDS[..rng.random_range(6..=WORDS.len())];
    let books = (0..n).map(|i| {
        let mut b = EBook::new(format!("{:04}", i), "");
        let pick = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<&str> {
            let len = rng.random_range(lo..=hi);
            (0..len).map(|_| *words.choose(rng).unwrap()).collect()
        };
        b.title = pick(&mut rng, 1, 4).join(" ");
        if rng.random_bool(0.9) {
            b.description = pick(&mut rng, 3, 25).join(" ");
        }
        let tags = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let len = rng.random_range(0..=4);
            let set: BTreeSet<&str> = (0..len).map(|_| *TAGS.choose(rng).unwrap()).collect();
            set.into_iter().map(String::from).collect()
        };
        if rng.random_bool(0.7) {
            b.editor_tags = tags(&mut rng);
        }
        if rng.random_bool(0.5) {
            b.search_terms = tags(&mut rng);
        }
        if rng.random_bool(0.5) {
            b.authors = vec![format!("author {}", rng.random_range(0..6))];
        }
        if rng.random_bool(0.3) {
            b.bisacs = vec![format!("FIC0{}", rng.random_range(0..4))];
        }
        if rng.random_bool(0.4) {
            b.review_keywords = tags(&mut rng);
        }
        b
    });
    Corpus::from_books(books.collect::<Vec<_>>()).unwrap()
}
