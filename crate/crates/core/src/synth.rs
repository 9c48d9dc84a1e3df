//! Seeded synthetic corpus generator.
//!
//! Books are grouped into topics. Every topic owns a set of content words
//! (titles and descriptions), an editor-tag vocabulary, a wider search-term
//! vocabulary and a pool of authors and category codes, so content-similar
//! books share annotations. Review keywords mix the editor vocabulary,
//! the search vocabulary and topical content words.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, EBook};
use crate::text::default_stopwords;

/// Generator parameters. Fractions are of all books unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub n_topics: usize,
    pub editor_fraction: f64,
    pub amazon_fraction: f64,
    /// Books carrying both editor tags and search terms.
    pub both_fraction: f64,
    pub review_fraction: f64,
    /// Probability that a book with editor tags has an author / BISAC.
    pub editor_author_rate: f64,
    pub editor_bisac_rate: f64,
    /// Same for books without editor tags.
    pub other_author_rate: f64,
    pub other_bisac_rate: f64,
    pub authors_per_topic: usize,
    pub bisacs_per_topic: usize,
    pub content_words_per_topic: usize,
    pub generic_words: usize,
    pub editor_vocab_per_topic: usize,
    pub search_vocab_per_topic: usize,
    pub generic_search_terms: usize,
    pub editor_tags_per_book: (usize, usize),
    pub search_terms_per_book: (usize, usize),
    pub review_keywords_per_book: (usize, usize),
    /// Probability that a search term is cut from the book's own title.
    pub title_term_rate: f64,
    /// Probability that a non-title search term comes from the shared
    /// cross-topic pool.
    pub generic_term_rate: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            n_topics: 20,
            editor_fraction: 0.70,
            amazon_fraction: 0.30,
            both_fraction: 0.01,
            review_fraction: 0.20,
            editor_author_rate: 0.95,
            editor_bisac_rate: 0.90,
            other_author_rate: 0.30,
            other_bisac_rate: 0.05,
            authors_per_topic: 15,
            bisacs_per_topic: 3,
            content_words_per_topic: 60,
            generic_words: 300,
            editor_vocab_per_topic: 40,
            search_vocab_per_topic: 150,
            generic_search_terms: 200,
            editor_tags_per_book: (3, 8),
            search_terms_per_book: (3, 8),
            review_keywords_per_book: (10, 30),
            title_term_rate: 0.3,
            generic_term_rate: 0.3,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fractions = [
            ("editor_fraction", self.editor_fraction),
            ("amazon_fraction", self.amazon_fraction),
            ("both_fraction", self.both_fraction),
            ("review_fraction", self.review_fraction),
            ("editor_author_rate", self.editor_author_rate),
            ("editor_bisac_rate", self.editor_bisac_rate),
            ("other_author_rate", self.other_author_rate),
            ("other_bisac_rate", self.other_bisac_rate),
            ("title_term_rate", self.title_term_rate),
            ("generic_term_rate", self.generic_term_rate),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(param(name, format!("{v} is outside [0, 1]")));
            }
        }
        if self.both_fraction > self.editor_fraction.min(self.amazon_fraction) {
            return Err(param(
                "both_fraction",
                "exceeds editor_fraction or amazon_fraction".into(),
            ));
        }
        if self.editor_fraction + self.amazon_fraction - self.both_fraction > 1.0 + 1e-12 {
            return Err(param(
                "amazon_fraction",
                "editor + amazon - both exceeds 1".into(),
            ));
        }
        let positive = [
            ("n_topics", self.n_topics),
            ("authors_per_topic", self.authors_per_topic),
            ("bisacs_per_topic", self.bisacs_per_topic),
            ("content_words_per_topic", self.content_words_per_topic),
            ("generic_words", self.generic_words),
            ("editor_vocab_per_topic", self.editor_vocab_per_topic),
            ("search_vocab_per_topic", self.search_vocab_per_topic),
            ("generic_search_terms", self.generic_search_terms),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(param(name, "must be at least 1".into()));
            }
        }
        for (name, (lo, hi)) in [
            ("editor_tags_per_book", self.editor_tags_per_book),
            ("search_terms_per_book", self.search_terms_per_book),
            ("review_keywords_per_book", self.review_keywords_per_book),
        ] {
            if lo == 0 || lo > hi {
                return Err(param(name, format!("invalid range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

fn param(name: &'static str, message: String) -> CorpusError {
    CorpusError::Parameter { name, message }
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st",
    "tr", "sch",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ei", "au"];

/// Produces unique pronounceable pseudo-words.
struct WordFactory {
    used: BTreeSet<String>,
    stopwords: BTreeSet<String>,
}

impl WordFactory {
    fn new() -> Self {
        WordFactory {
            used: BTreeSet::new(),
            stopwords: default_stopwords(),
        }
    }

    fn word(&mut self, rng: &mut ChaCha8Rng, min_len: usize, syllables: (usize, usize)) -> String {
        loop {
            let n = rng.random_range(syllables.0..=syllables.1);
            let mut w = String::new();
            for _ in 0..n {
                w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
                w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
            }
            if rng.random_bool(0.3) {
                w.push(['n', 'r', 's', 'l', 't'][rng.random_range(0..5)]);
            }
            if w.chars().count() >= min_len && !self.stopwords.contains(&w) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, rng: &mut ChaCha8Rng, n: usize, min_len: usize, syl: (usize, usize)) -> Vec<String> {
        (0..n).map(|_| self.word(rng, min_len, syl)).collect()
    }

    /// Tags are mostly single words, some two-word phrases.
    fn tags(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| {
                let first = self.word(rng, 4, (2, 3));
                if rng.random_bool(0.2) {
                    let second = self.word(rng, 4, (2, 3));
                    format!("{first} {second}")
                } else {
                    first
                }
            })
            .collect()
    }
}

/// Zipf-weighted sampler over a fixed list.
struct Zipf<'a> {
    items: &'a [String],
    dist: WeightedIndex<f64>,
}

impl<'a> Zipf<'a> {
    fn new(items: &'a [String], exponent: f64) -> Self {
        let weights: Vec<f64> = (1..=items.len()).map(|r| (r as f64).powf(-exponent)).collect();
        Zipf {
            items,
            dist: WeightedIndex::new(weights).expect("non-empty positive weights"),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> &'a str {
        &self.items[self.dist.sample(rng)]
    }
}

struct Topic {
    content: Vec<String>,
    editor_vocab: Vec<String>,
    search_vocab: Vec<String>,
    authors: Vec<Author>,
    bisacs: Vec<String>,
}

struct Author {
    name: String,
    /// Editor tags this author's books reuse.
    signature: Vec<String>,
}

fn sample_distinct(
    rng: &mut ChaCha8Rng,
    count: usize,
    max_tries: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> String,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < max_tries {
        let t = draw(rng);
        if !out.contains(&t) {
            out.push(t);
        }
        tries += 1;
    }
    out
}

fn exact_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Deterministic topic-clustered corpus for `seed`.
pub fn generate_synthetic(seed: u64, n_books: usize, profile: &SynthProfile) -> Result<Corpus, CorpusError> {
    if n_books == 0 {
        return Err(param("n_books", "must be at least 1".into()));
    }
    profile.validate()?;
    let p = profile;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = WordFactory::new();

    let generic = words.words(&mut rng, p.generic_words, 5, (3, 4));
    let generic_terms = words.tags(&mut rng, p.generic_search_terms);
    let topics: Vec<Topic> = (0..p.n_topics)
        .map(|z| {
            let content = words.words(&mut rng, p.content_words_per_topic, 5, (3, 4));
            let editor_vocab = words.tags(&mut rng, p.editor_vocab_per_topic);
            let search_vocab = words.tags(&mut rng, p.search_vocab_per_topic);
            let authors = (0..p.authors_per_topic)
                .map(|_| {
                    let first = capitalize(&words.word(&mut rng, 3, (2, 2)));
                    let last = capitalize(&words.word(&mut rng, 4, (2, 3)));
                    let signature = sample_distinct(&mut rng, 3, 50, |r| {
                        editor_vocab[r.random_range(0..editor_vocab.len())].clone()
                    });
                    Author {
                        name: format!("{first} {last}"),
                        signature,
                    }
                })
                .collect();
            let bisacs = (0..p.bisacs_per_topic)
                .map(|j| format!("FIC{:03}{:03}", z + 1, j * 10))
                .collect();
            Topic {
                content,
                editor_vocab,
                search_vocab,
                authors,
                bisacs,
            }
        })
        .collect();

    // Exact source allocation over a shuffled book order.
    let mut order: Vec<usize> = (0..n_books).collect();
    order.shuffle(&mut rng);
    let n_both = exact_count(p.both_fraction, n_books);
    let n_editor = exact_count(p.editor_fraction, n_books).max(n_both);
    let n_amazon = exact_count(p.amazon_fraction, n_books).max(n_both);
    let n_amazon_only = (n_amazon - n_both).min(n_books - n_editor);
    let mut has_editor = vec![false; n_books];
    let mut has_amazon = vec![false; n_books];
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_editor {
            has_editor[i] = true;
        }
        if pos < n_both || (pos >= n_editor && pos < n_editor + n_amazon_only) {
            has_amazon[i] = true;
        }
    }
    order.shuffle(&mut rng);
    let mut has_review = vec![false; n_books];
    for &i in order.iter().take(exact_count(p.review_fraction, n_books)) {
        has_review[i] = true;
    }

    let generic_zipf = Zipf::new(&generic, 0.8);
    let generic_term_zipf = Zipf::new(&generic_terms, 1.0);
    let stop_fill = ["the", "and", "of", "und", "die", "a"];

    let mut books = Vec::with_capacity(n_books);
    for i in 0..n_books {
        let topic = &topics[rng.random_range(0..topics.len())];
        let content = Zipf::new(&topic.content, 0.9);
        let editor_zipf = Zipf::new(&topic.editor_vocab, 1.1);
        let search_zipf = Zipf::new(&topic.search_vocab, 0.4);

        let title_len = rng.random_range(2..=4);
        let mut title_words: Vec<String> = Vec::new();
        if rng.random_bool(0.3) {
            title_words.push("The".into());
        }
        for _ in 0..title_len {
            let w = if rng.random_bool(0.85) {
                content.sample(&mut rng)
            } else {
                generic_zipf.sample(&mut rng)
            };
            title_words.push(capitalize(w));
        }
        let title = title_words.join(" ");

        let desc_len = rng.random_range(25..=45);
        let mut desc: Vec<&str> = Vec::with_capacity(desc_len);
        for _ in 0..desc_len {
            let r: f64 = rng.random();
            desc.push(if r < 0.55 {
                content.sample(&mut rng)
            } else if r < 0.85 {
                generic_zipf.sample(&mut rng)
            } else {
                stop_fill[rng.random_range(0..stop_fill.len())]
            });
        }
        let description = format!("{}.", desc.join(" "));

        let author_rate = if has_editor[i] { p.editor_author_rate } else { p.other_author_rate };
        let bisac_rate = if has_editor[i] { p.editor_bisac_rate } else { p.other_bisac_rate };
        let author = rng
            .random_bool(author_rate)
            .then(|| &topic.authors[rng.random_range(0..topic.authors.len())]);
        let bisacs: Vec<String> = if rng.random_bool(bisac_rate) {
            vec![topic.bisacs[rng.random_range(0..topic.bisacs.len())].clone()]
        } else {
            Vec::new()
        };

        let editor_tags = if has_editor[i] {
            let n = rng.random_range(p.editor_tags_per_book.0..=p.editor_tags_per_book.1);
            sample_distinct(&mut rng, n, n * 20, |r| match author {
                Some(a) if r.random_bool(0.35) => a.signature[r.random_range(0..a.signature.len())].clone(),
                _ => editor_zipf.sample(r).to_string(),
            })
        } else {
            Vec::new()
        };

        let title_tokens: Vec<String> = title_words
            .iter()
            .filter(|w| *w != "The")
            .map(|w| w.to_lowercase())
            .collect();
        let search_terms = if has_amazon[i] {
            let n = rng.random_range(p.search_terms_per_book.0..=p.search_terms_per_book.1);
            sample_distinct(&mut rng, n, n * 20, |r| {
                if r.random_bool(p.title_term_rate) {
                    let len = r.random_range(1..=2.min(title_tokens.len()));
                    let start = r.random_range(0..=title_tokens.len() - len);
                    title_tokens[start..start + len].join(" ")
                } else if r.random_bool(p.generic_term_rate) {
                    generic_term_zipf.sample(r).to_string()
                } else {
                    search_zipf.sample(r).to_string()
                }
            })
        } else {
            Vec::new()
        };

        let review_keywords = if has_review[i] {
            let n = rng.random_range(p.review_keywords_per_book.0..=p.review_keywords_per_book.1);
            sample_distinct(&mut rng, n, n * 20, |r| {
                let x: f64 = r.random();
                match author {
                    Some(a) if x < 0.10 => a.signature[r.random_range(0..a.signature.len())].clone(),
                    _ if x < 0.50 => editor_zipf.sample(r).to_string(),
                    _ if x < 0.70 => search_zipf.sample(r).to_string(),
                    _ => content.sample(r).to_string(),
                }
            })
        } else {
            Vec::new()
        };

        books.push(EBook {
            isbn: format!("978{:010}", i),
            title,
            description,
            authors: author.map(|a| vec![a.name.clone()]).unwrap_or_default(),
            bisacs,
            editor_tags,
            search_terms,
            review_keywords,
        });
    }
    Corpus::from_books(books)
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::stats;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_bytes() {
        let p = SynthProfile::default();
        let a = generate_synthetic(7, 100, &p).unwrap().to_jsonl();
        let b = generate_synthetic(7, 100, &p).unwrap().to_jsonl();
        assert_eq!(a, b);
        let c = generate_synthetic(8, 100, &p).unwrap().to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn overlap_fraction_is_forced() {
        let s = stats(&generate_synthetic(7, 100, &SynthProfile::default()).unwrap());
        assert_eq!(s.n_books, 100);
        assert_eq!(s.n_with_both, 1);
        assert_eq!(s.n_with_editor_tags, 70);
        assert_eq!(s.n_with_search_terms, 30);
        assert_eq!(s.n_with_review_keywords, 20);
    }

    #[test]
    fn zero_review_rate() {
        let p = SynthProfile {
            review_fraction: 0.0,
            ..SynthProfile::default()
        };
        let s = stats(&generate_synthetic(3, 100, &p).unwrap());
        assert_eq!(s.n_with_review_keywords, 0);
    }

    #[test]
    fn rejects_bad_fractions() {
        for p in [
            SynthProfile { editor_fraction: 1.5, ..SynthProfile::default() },
            SynthProfile { review_fraction: -0.1, ..SynthProfile::default() },
            SynthProfile { both_fraction: 0.5, amazon_fraction: 0.3, ..SynthProfile::default() },
            SynthProfile { editor_fraction: 0.9, amazon_fraction: 0.5, both_fraction: 0.1, ..SynthProfile::default() },
        ] {
            assert!(matches!(generate_synthetic(1, 10, &p), Err(CorpusError::Parameter { .. })));
        }
        assert!(generate_synthetic(1, 0, &SynthProfile::default()).is_err());
    }

    #[test]
    fn some_search_terms_come_from_titles() {
        let s = stats(&generate_synthetic(11, 500, &SynthProfile::default()).unwrap());
        assert!(s.title_overlap_fraction > 0.15 && s.title_overlap_fraction < 0.5, "{}", s.title_overlap_fraction);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn both_never_exceeds_either_source(seed in 0u64..1000, n in 1usize..120, both in 0.0f64..0.3) {
            let p = SynthProfile { both_fraction: both, ..SynthProfile::default() };
            let corpus = generate_synthetic(seed, n, &p).unwrap();
            let s = stats(&corpus);
            prop_assert!(s.n_with_both <= s.n_with_editor_tags.min(s.n_with_search_terms));
            for src in crate::corpus::TagSource::ALL {
                let total: usize = corpus.source_counts(src).values().sum();
                let per_book: usize = corpus.books().map(|b| b.tags(src).len()).sum();
                prop_assert_eq!(total, per_book);
            }
        }
    }
}
