//! Inverted-index TF-IDF vectors over a book text field with exact top-N
//! cosine neighbor search.
//!
//! Weights are raw term count times `ln(N / df)`, where `N` counts the books
//! whose field yields at least one token. Vectors are L2-normalized, so the
//! cosine of two books is the dot product of their stored vectors.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EBook};
use crate::text::{preprocess, PreprocessConfig};

#[derive(Debug, Error)]
pub enum TfidfError {
    #[error("empty index: no {0} text survives the document-frequency and word-length filters")]
    EmptyIndex(TextField),
    #[error("isbn {0} is not in the index or has an empty vector")]
    UnknownDocument(String),
    #[error("index artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextField {
    Title,
    Description,
}

impl TextField {
    pub fn text<'a>(&self, book: &'a EBook) -> &'a str {
        match self {
            TextField::Title => &book.title,
            TextField::Description => &book.description,
        }
    }
}

impl fmt::Display for TextField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextField::Title => "title",
            TextField::Description => "description",
        })
    }
}

impl FromStr for TextField {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "title" => Ok(TextField::Title),
            "description" | "desc" => Ok(TextField::Description),
            other => Err(format!("unknown text field `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfidfParams {
    pub min_df: usize,
    pub min_word_length: usize,
}

impl Default for TfidfParams {
    fn default() -> Self {
        TfidfParams {
            min_df: 10,
            min_word_length: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub df: usize,
    pub index: u32,
}

/// Sparse vector as `(term index, weight)` pairs in ascending index order.
pub type SparseVector = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub isbn: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfIndex {
    field: TextField,
    params: TfidfParams,
    stopwords: Vec<String>,
    n_docs: usize,
    vocabulary: BTreeMap<String, Term>,
    doc_vectors: BTreeMap<String, SparseVector>,
    /// Term index -> (isbn, weight). Rebuilt on load.
    #[serde(skip)]
    postings: Vec<Vec<(usize, f64)>>,
    #[serde(skip)]
    doc_ids: Vec<String>,
}

impl TfidfIndex {
    pub fn build(
        corpus: &Corpus,
        field: TextField,
        params: TfidfParams,
        preprocessing: &PreprocessConfig,
    ) -> Result<TfidfIndex, TfidfError> {
        let cfg = PreprocessConfig {
            stopwords: preprocessing.stopwords.clone(),
            min_word_length: params.min_word_length,
        };
        let docs: Vec<(&str, Vec<String>)> = corpus
            .books()
            .map(|b| (b.isbn.as_str(), preprocess(field.text(b), &cfg)))
            .filter(|(_, toks)| !toks.is_empty())
            .collect();
        let n_docs = docs.len();

        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, toks) in &docs {
            let mut uniq: Vec<&str> = toks.iter().map(String::as_str).collect();
            uniq.sort_unstable();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let vocabulary: BTreeMap<String, Term> = df
            .into_iter()
            .filter(|&(_, d)| d >= params.min_df.max(1))
            .enumerate()
            .map(|(i, (t, d))| (t.to_string(), Term { df: d, index: i as u32 }))
            .collect();

        let mut doc_vectors = BTreeMap::new();
        for (isbn, toks) in &docs {
            if let Some(v) = weigh(toks, &vocabulary, n_docs) {
                doc_vectors.insert(isbn.to_string(), v);
            }
        }
        if doc_vectors.is_empty() {
            return Err(TfidfError::EmptyIndex(field));
        }
        let mut index = TfidfIndex {
            field,
            params,
            stopwords: cfg.stopwords.into_iter().collect(),
            n_docs,
            vocabulary,
            doc_vectors,
            postings: Vec::new(),
            doc_ids: Vec::new(),
        };
        index.rebuild_postings();
        Ok(index)
    }

    fn rebuild_postings(&mut self) {
        self.doc_ids = self.doc_vectors.keys().cloned().collect();
        self.postings = vec![Vec::new(); self.vocabulary.len()];
        for (doc, v) in self.doc_vectors.values().enumerate() {
            for &(t, w) in v {
                self.postings[t as usize].push((doc, w));
            }
        }
    }

    pub fn field(&self) -> TextField {
        self.field
    }

    pub fn params(&self) -> TfidfParams {
        self.params
    }

    /// Documents with a non-empty field before vocabulary filtering.
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, Term> {
        &self.vocabulary
    }

    pub fn vector(&self, isbn: &str) -> Option<&SparseVector> {
        self.doc_vectors.get(isbn)
    }

    pub fn doc_vectors(&self) -> &BTreeMap<String, SparseVector> {
        &self.doc_vectors
    }

    /// Weighs free text against the index vocabulary; `None` when nothing
    /// survives.
    pub fn vectorize(&self, text: &str) -> Option<SparseVector> {
        let cfg = PreprocessConfig {
            stopwords: self.stopwords.iter().cloned().collect(),
            min_word_length: self.params.min_word_length,
        };
        weigh(&preprocess(text, &cfg), &self.vocabulary, self.n_docs)
    }

    /// Top-`n` most similar indexed books, excluding the query itself.
    pub fn neighbors(&self, query_isbn: &str, n: usize) -> Result<Vec<Neighbor>, TfidfError> {
        let v = self
            .doc_vectors
            .get(query_isbn)
            .ok_or_else(|| TfidfError::UnknownDocument(query_isbn.to_string()))?;
        Ok(self.neighbors_of_vector(v, Some(query_isbn), n))
    }

    /// Top-`n` books by cosine to `query`. Candidates come from the
    /// postings; each score is then the merge dot product of the two sparse
    /// vectors so it is independent of posting order. Zero scores are
    /// dropped and ties go to the smaller isbn.
    pub fn neighbors_of_vector(&self, query: &SparseVector, exclude: Option<&str>, n: usize) -> Vec<Neighbor> {
        if n == 0 {
            return Vec::new();
        }
        let mut seen = vec![false; self.doc_ids.len()];
        let mut candidates = Vec::new();
        for &(t, _) in query {
            if let Some(list) = self.postings.get(t as usize) {
                for &(doc, _) in list {
                    if !seen[doc] {
                        seen[doc] = true;
                        candidates.push(doc);
                    }
                }
            }
        }
        let mut scored: Vec<Neighbor> = candidates
            .into_iter()
            .filter(|&d| Some(self.doc_ids[d].as_str()) != exclude)
            .map(|d| {
                let isbn = &self.doc_ids[d];
                Neighbor {
                    similarity: sparse_dot(query, &self.doc_vectors[isbn]),
                    isbn: isbn.clone(),
                }
            })
            .filter(|nb| nb.similarity > 0.0)
            .collect();
        scored.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.isbn.cmp(&b.isbn))
        });
        scored.truncate(n);
        scored
    }

    pub fn save_json(&self, path: &Path) -> Result<(), TfidfError> {
        let s = serde_json::to_string(self).map_err(|e| TfidfError::Artifact(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<TfidfIndex, TfidfError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn from_json(s: &str) -> Result<TfidfIndex, TfidfError> {
        let mut index: TfidfIndex =
            serde_json::from_str(s).map_err(|e| TfidfError::Artifact(e.to_string()))?;
        index.rebuild_postings();
        Ok(index)
    }
}

/// Unit-norm TF-IDF vector of `tokens`, or `None` if every weight is zero.
fn weigh(tokens: &[String], vocabulary: &BTreeMap<String, Term>, n_docs: usize) -> Option<SparseVector> {
    let mut tf: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for t in tokens {
        if let Some(term) = vocabulary.get(t) {
            tf.entry(term.index).or_insert((0, term.df)).0 += 1;
        }
    }
    let mut v: SparseVector = tf
        .into_iter()
        .map(|(idx, (count, df))| (idx, count as f64 * (n_docs as f64 / df as f64).ln()))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|(_, w)| *w /= norm);
    Some(v)
}

pub fn sparse_dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EBook;
    use proptest::prelude::*;

    fn corpus_of(descs: &[&str]) -> Corpus {
        Corpus::from_books(descs.iter().enumerate().map(|(i, d)| EBook {
            isbn: format!("{i:03}"),
            title: format!("t{i}"),
            description: d.to_string(),
            ..EBook::default()
        }))
        .unwrap()
    }

    fn loose() -> TfidfParams {
        TfidfParams { min_df: 1, min_word_length: 1 }
    }

    #[test]
    fn weight_is_tf_times_ln_idf() {
        let c = corpus_of(&["alpha alpha common", "beta common", "gamma common", "delta common"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        // "common" has idf ln(4/4) = 0, so doc 0 holds only alpha: weight
        // 2 ln 4 before normalization, 1 after.
        let alpha = idx.vocabulary()["alpha"].index;
        let v = idx.vector("000").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].0, alpha);
        assert!((v[0].1 - 1.0).abs() < 1e-12);

        // Unnormalized check on a two-term doc.
        let c = corpus_of(&["alpha alpha beta", "beta", "gamma", "delta"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        let v = idx.vector("000").unwrap();
        let (wa, wb) = (2.0 * 4f64.ln(), 2f64.ln());
        let norm = (wa * wa + wb * wb).sqrt();
        let a = idx.vocabulary()["alpha"].index;
        let got_a = v.iter().find(|&&(t, _)| t == a).unwrap().1;
        assert!((got_a - wa / norm).abs() < 1e-12);
    }

    #[test]
    fn token_in_every_doc_gets_zero_weight() {
        let c = corpus_of(&["shared one", "shared two", "shared three"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        let shared = idx.vocabulary()["shared"].index;
        for v in idx.doc_vectors().values() {
            assert!(v.iter().all(|&(t, _)| t != shared));
        }
    }

    #[test]
    fn all_tokens_below_min_df_is_empty_index() {
        let c = corpus_of(&["alpha", "beta", "gamma"]);
        let err = TfidfIndex::build(&c, TextField::Description, TfidfParams { min_df: 2, min_word_length: 1 }, &PreprocessConfig::bare());
        assert!(matches!(err, Err(TfidfError::EmptyIndex(_))));
        let c = corpus_of(&["", "", ""]);
        assert!(TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).is_err());
    }

    #[test]
    fn identical_text_has_similarity_one() {
        let c = corpus_of(&["night crime murder", "night crime murder", "garden flowers", "garden sun"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        let nb = idx.neighbors("000", 5).unwrap();
        assert_eq!(nb[0].isbn, "001");
        assert!((nb[0].similarity - 1.0).abs() < 1e-12);
        assert!(nb.iter().all(|n| n.isbn != "000"));
    }

    #[test]
    fn isolated_doc_has_no_neighbors() {
        let c = corpus_of(&["zebra", "apple banana", "apple cherry"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        assert!(idx.neighbors("000", 10).unwrap().is_empty());
        assert!(matches!(idx.neighbors("999", 3), Err(TfidfError::UnknownDocument(_))));
    }

    #[test]
    fn five_doc_fixture_matches_brute_force_ranking() {
        let c = corpus_of(&[
            "crime murder detective night",
            "crime detective police city",
            "murder night shadow crime",
            "garden flowers spring",
            "spring garden police",
        ]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        for q in idx.doc_vectors().keys() {
            let got: Vec<String> = idx.neighbors(q, 10).unwrap().into_iter().map(|n| n.isbn).collect();
            let mut brute: Vec<(String, f64)> = idx
                .doc_vectors()
                .iter()
                .filter(|(k, _)| *k != q)
                .map(|(k, v)| (k.clone(), dense_dot(idx.vector(q).unwrap(), v)))
                .filter(|(_, s)| *s > 0.0)
                .collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let want: Vec<String> = brute.into_iter().map(|(k, _)| k).collect();
            assert_eq!(got, want, "query {q}");
        }
    }

    fn dense_dot(a: &SparseVector, b: &SparseVector) -> f64 {
        let dim = a.iter().chain(b).map(|&(t, _)| t as usize + 1).max().unwrap_or(0);
        let mut da = vec![0.0; dim];
        let mut db = vec![0.0; dim];
        a.iter().for_each(|&(t, w)| da[t as usize] = w);
        b.iter().for_each(|&(t, w)| db[t as usize] = w);
        da.iter().zip(&db).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = corpus_of(&["crime murder night", "crime police", "murder shadow", "garden"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        idx.save_json(&path).unwrap();
        let back = TfidfIndex::load_json(&path).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.neighbors("000", 3).unwrap(), idx.neighbors("000", 3).unwrap());
    }

    #[test]
    fn vectorize_matches_stored_vector() {
        let c = corpus_of(&["crime murder night", "crime police", "murder shadow", "garden"]);
        let idx = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()).unwrap();
        assert_eq!(idx.vectorize("crime murder night").as_ref(), idx.vector("000"));
        assert!(idx.vectorize("unseen words").is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn neighbors_are_sorted_unit_dot_products(
            docs in proptest::collection::vec(proptest::collection::vec(0usize..12, 1..8), 3..15),
            n in 1usize..10,
        ) {
            let texts: Vec<String> = docs.iter()
                .map(|d| d.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let c = corpus_of(&refs);
            let Ok(idx) = TfidfIndex::build(&c, TextField::Description, loose(), &PreprocessConfig::bare()) else {
                return Ok(());
            };
            for v in idx.doc_vectors().values() {
                let norm: f64 = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
            for q in idx.doc_vectors().keys() {
                let nb = idx.neighbors(q, n).unwrap();
                prop_assert!(nb.len() <= n);
                for w in nb.windows(2) {
                    prop_assert!(w[0].similarity >= w[1].similarity);
                }
                for x in &nb {
                    prop_assert!(&x.isbn != q);
                    prop_assert!(x.similarity > 0.0 && x.similarity <= 1.0 + 1e-9);
                    let brute = dense_dot(idx.vector(q).unwrap(), idx.vector(&x.isbn).unwrap());
                    prop_assert!((brute - x.similarity).abs() < 1e-9);
                }
            }
        }
    }
}
