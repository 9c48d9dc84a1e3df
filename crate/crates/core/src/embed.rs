//! PV-DBOW paragraph vectors trained with negative sampling.
//!
//! Every document owns a vector that is trained to predict each of its own
//! tokens against `negative` noise tokens drawn from the unigram
//! distribution raised to 0.75. Output word vectors start at zero, document
//! vectors uniformly in `[-0.5/dim, 0.5/dim]`, and the learning rate decays
//! linearly from `lr0` to `lr0 / 100` over all token steps. Inference for
//! unseen text freezes the word vectors and optimizes a fresh document
//! vector under the same objective.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::text::{preprocess, PreprocessConfig, TokenStream};

const MAGIC: &[u8; 8] = b"TAGRECEM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no document has any text to train on")]
    NoDocuments,
    #[error("need at least 2 training documents, got {0}")]
    TooFewDocuments(usize),
    #[error("invalid hyperparameter `{0}`")]
    Hyperparameter(&'static str),
    #[error("non-finite value in document {doc} during epoch {epoch}; the learning rate is too high for this corpus")]
    NonFinite { epoch: usize, doc: String },
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TrainingMode {
    /// Single thread, bit-reproducible for a fixed seed.
    Deterministic,
    /// Lock-free shared word vectors across threads. Not reproducible.
    Parallel { threads: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub dim: usize,
    pub negative: usize,
    pub lr0: f64,
    pub epochs: usize,
    pub seed: u64,
    pub infer_epochs: usize,
    /// Vocabulary cutoff; 1 keeps every token.
    pub min_count: usize,
    /// Frequent-word subsampling threshold; 0 disables it.
    pub subsample: f64,
    pub mode: TrainingMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 50,
            negative: 10,
            lr0: 0.025,
            epochs: 10,
            seed: 1,
            infer_epochs: 50,
            min_count: 1,
            subsample: 0.0,
            mode: TrainingMode::Deterministic,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Hyperparameter("dim"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(EmbedError::Hyperparameter("lr"));
        }
        if self.epochs == 0 {
            return Err(EmbedError::Hyperparameter("epochs"));
        }
        if !(self.subsample.is_finite() && self.subsample >= 0.0) {
            return Err(EmbedError::Hyperparameter("subsample"));
        }
        if let TrainingMode::Parallel { threads: 0 } = self.mode {
            return Err(EmbedError::Hyperparameter("threads"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingDoc {
    pub isbn: String,
    pub tokens: TokenStream,
}

/// Training documents plus the isbns skipped for lack of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingCorpus {
    pub docs: Vec<TrainingDoc>,
    pub skipped: Vec<String>,
}

/// One document per book, built from description, title, editor tags and
/// search terms, in isbn order. Review keywords are never included.
pub fn build_training_corpus(corpus: &Corpus, preprocessing: &PreprocessConfig) -> Result<TrainingCorpus, EmbedError> {
    let cfg = PreprocessConfig {
        stopwords: preprocessing.stopwords.clone(),
        min_word_length: 1,
    };
    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for book in corpus.books() {
        let mut tokens = preprocess(&book.description, &cfg);
        tokens.extend(preprocess(&book.title, &cfg));
        for tag in book.editor_tags.iter().chain(&book.search_terms) {
            tokens.extend(preprocess(tag, &cfg));
        }
        if tokens.is_empty() {
            skipped.push(book.isbn.clone());
        } else {
            docs.push(TrainingDoc {
                isbn: book.isbn.clone(),
                tokens,
            });
        }
    }
    if docs.is_empty() {
        return Err(EmbedError::NoDocuments);
    }
    Ok(TrainingCorpus { docs, skipped })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, computed without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative-sampling loss of one (document, target, negatives) example:
/// `-ln σ(d·u_t) - Σ ln σ(-d·u_n)`.
pub fn negative_sampling_loss(doc: &[f64], target: &[f64], negatives: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(doc, target)) + negatives.iter().map(|u| neg_log_sigmoid(-dot(doc, u))).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsGradient {
    pub doc: Vec<f64>,
    pub target: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic gradient of [`negative_sampling_loss`]. For an output vector
/// `u` with label `y`, `∂L/∂u = (σ(d·u) - y)·d` and the document collects
/// `(σ(d·u) - y)·u`.
pub fn negative_sampling_gradient(doc: &[f64], target: &[f64], negatives: &[&[f64]]) -> NsGradient {
    let mut g_doc = vec![0.0; doc.len()];
    let mut out = |u: &[f64], label: f64| -> Vec<f64> {
        let coef = sigmoid(dot(doc, u)) - label;
        for (g, x) in g_doc.iter_mut().zip(u) {
            *g += coef * x;
        }
        doc.iter().map(|x| coef * x).collect()
    };
    let g_target = out(target, 1.0);
    let g_negs = negatives.iter().map(|u| out(u, 0.0)).collect();
    NsGradient {
        doc: g_doc,
        target: g_target,
        negatives: g_negs,
    }
}

/// Row access to the output word vectors, shared by the plain and the
/// lock-free stores.
trait WordRows {
    fn dot_row(&mut self, row: usize, x: &[f64]) -> f64;
    /// `acc += a * row`
    fn accumulate_row(&mut self, row: usize, a: f64, acc: &mut [f64]);
    /// `row += a * x`
    fn add_to_row(&mut self, row: usize, a: f64, x: &[f64]);
}

struct PlainRows<'a> {
    data: &'a mut [f64],
    dim: usize,
}

impl WordRows for PlainRows<'_> {
    fn dot_row(&mut self, row: usize, x: &[f64]) -> f64 {
        dot(&self.data[row * self.dim..(row + 1) * self.dim], x)
    }
    fn accumulate_row(&mut self, row: usize, a: f64, acc: &mut [f64]) {
        let r = &self.data[row * self.dim..(row + 1) * self.dim];
        acc.iter_mut().zip(r).for_each(|(s, v)| *s += a * v);
    }
    fn add_to_row(&mut self, row: usize, a: f64, x: &[f64]) {
        let r = &mut self.data[row * self.dim..(row + 1) * self.dim];
        r.iter_mut().zip(x).for_each(|(v, d)| *v += a * d);
    }
}

/// Frozen rows for inference.
struct FrozenRows<'a> {
    data: &'a [f64],
    dim: usize,
}

impl WordRows for FrozenRows<'_> {
    fn dot_row(&mut self, row: usize, x: &[f64]) -> f64 {
        dot(&self.data[row * self.dim..(row + 1) * self.dim], x)
    }
    fn accumulate_row(&mut self, row: usize, a: f64, acc: &mut [f64]) {
        let r = &self.data[row * self.dim..(row + 1) * self.dim];
        acc.iter_mut().zip(r).for_each(|(s, v)| *s += a * v);
    }
    fn add_to_row(&mut self, _row: usize, _a: f64, _x: &[f64]) {}
}

/// Hogwild-style storage: relaxed atomic loads and stores of f64 bits.
struct AtomicRows<'a> {
    data: &'a [AtomicU64],
    dim: usize,
}

impl AtomicRows<'_> {
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.data[i].load(Ordering::Relaxed))
    }
}

impl WordRows for AtomicRows<'_> {
    fn dot_row(&mut self, row: usize, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(j, v)| v * self.get(row * self.dim + j)).sum()
    }
    fn accumulate_row(&mut self, row: usize, a: f64, acc: &mut [f64]) {
        for (j, s) in acc.iter_mut().enumerate() {
            *s += a * self.get(row * self.dim + j);
        }
    }
    fn add_to_row(&mut self, row: usize, a: f64, x: &[f64]) {
        for (j, d) in x.iter().enumerate() {
            let i = row * self.dim + j;
            let v = self.get(i) + a * d;
            self.data[i].store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

/// One SGD step on a (document, target) pair with negative samples drawn
/// by the caller. Returns the example's loss before the update.
fn sgd_step<W: WordRows>(
    words: &mut W,
    doc: &mut [f64],
    target: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut [f64],
) -> f64 {
    scratch.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let outputs = std::iter::once((target, 1.0)).chain(negatives.iter().filter(|&&n| n != target).map(|&n| (n, 0.0)));
    for (row, label) in outputs {
        let x = words.dot_row(row, doc);
        loss += if label > 0.0 { neg_log_sigmoid(x) } else { neg_log_sigmoid(-x) };
        let coef = sigmoid(x) - label;
        words.accumulate_row(row, coef, scratch);
        words.add_to_row(row, -lr * coef, doc);
    }
    doc.iter_mut().zip(scratch.iter()).for_each(|(d, g)| *d -= lr * g);
    loss
}

/// Unigram^0.75 noise distribution.
#[derive(Debug, Clone)]
struct NoiseSampler {
    dist: WeightedIndex<f64>,
}

impl NoiseSampler {
    fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        NoiseSampler {
            dist: WeightedIndex::new(weights).expect("vocabulary is non-empty"),
        }
    }

    fn fill<R: Rng>(&self, rng: &mut R, out: &mut [usize]) {
        out.iter_mut().for_each(|o| *o = self.dist.sample(rng));
    }
}

fn linear_lr(lr0: f64, step: usize, total: usize) -> f64 {
    let progress = step as f64 / total.max(1) as f64;
    (lr0 - (lr0 - lr0 / 100.0) * progress).max(lr0 / 100.0)
}

fn init_vector<R: Rng>(rng: &mut R, dim: usize, out: &mut [f64]) {
    let bound = 0.5 / dim as f64;
    out.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
}

/// Result of inferring a vector for unseen text.
#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub vector: Vec<f64>,
    /// Every token was out of vocabulary; `vector` is all zeros.
    pub all_oov: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    hyper: Hyperparams,
    stopwords: Vec<String>,
    vocab: Vec<String>,
    counts: Vec<u64>,
    word_index: HashMap<String, usize>,
    /// Row-major `|vocab| × dim`.
    word_out: Vec<f64>,
    doc_ids: Vec<String>,
    /// Row-major `|docs| × dim`.
    doc_vectors: Vec<f64>,
    epoch_losses: Vec<f64>,
}

impl fmt::Display for EmbeddingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PV-DBOW model: {} docs, {} words, dim {}",
            self.doc_ids.len(),
            self.vocab.len(),
            self.hyper.dim
        )
    }
}

impl EmbeddingModel {
    pub fn train(docs: &[TrainingDoc], hyper: &Hyperparams, preprocessing: &PreprocessConfig) -> Result<Self, EmbedError> {
        hyper.validate()?;
        if docs.len() < 2 {
            return Err(EmbedError::TooFewDocuments(docs.len()));
        }
        let dim = hyper.dim;

        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for d in docs {
            for t in &d.tokens {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(_, c)| c >= hyper.min_count.max(1) as u64)
            .collect();
        if entries.is_empty() {
            return Err(EmbedError::NoDocuments);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let vocab: Vec<String> = entries.iter().map(|(t, _)| t.to_string()).collect();
        let counts: Vec<u64> = entries.iter().map(|&(_, c)| c).collect();
        let word_index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let encoded: Vec<Vec<usize>> = docs
            .iter()
            .map(|d| d.tokens.iter().filter_map(|t| word_index.get(t).copied()).collect())
            .collect();
        let total_count: u64 = counts.iter().sum();
        let keep_prob: Vec<f64> = counts
            .iter()
            .map(|&c| {
                if hyper.subsample <= 0.0 {
                    1.0
                } else {
                    let t = hyper.subsample * total_count as f64;
                    ((c as f64 / t).sqrt() + 1.0) * t / c as f64
                }
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut doc_vectors = vec![0.0; docs.len() * dim];
        for row in doc_vectors.chunks_mut(dim) {
            init_vector(&mut rng, dim, row);
        }
        let mut word_out = vec![0.0; vocab.len() * dim];
        let sampler = NoiseSampler::new(&counts);
        let tokens_per_epoch: usize = encoded.iter().map(Vec::len).sum();
        let total_steps = tokens_per_epoch * hyper.epochs;

        let epoch_losses = match hyper.mode {
            TrainingMode::Deterministic => train_single(
                &encoded, &mut doc_vectors, &mut word_out, &sampler, &keep_prob, hyper, total_steps, &mut rng, docs,
            )?,
            TrainingMode::Parallel { threads } => train_parallel(
                &encoded, &mut doc_vectors, &mut word_out, &sampler, &keep_prob, hyper, total_steps, threads, docs,
            )?,
        };

        Ok(EmbeddingModel {
            hyper: hyper.clone(),
            stopwords: preprocessing.stopwords.iter().cloned().collect(),
            vocab,
            counts,
            word_index,
            word_out,
            doc_ids: docs.iter().map(|d| d.isbn.clone()).collect(),
            doc_vectors,
            epoch_losses,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains_word(&self, token: &str) -> bool {
        self.word_index.contains_key(token)
    }

    /// Frequency of a vocabulary word in the training corpus.
    pub fn word_count(&self, token: &str) -> Option<u64> {
        self.word_index.get(token).map(|&i| self.counts[i])
    }

    /// Mean loss per token step for each epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_vector(&self, isbn: &str) -> Option<&[f64]> {
        let dim = self.hyper.dim;
        self.doc_ids
            .iter()
            .position(|d| d == isbn)
            .map(|i| &self.doc_vectors[i * dim..(i + 1) * dim])
    }

    pub fn doc_vectors(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.doc_ids.iter().map(String::as_str).zip(self.doc_vectors.chunks(self.hyper.dim))
    }

    /// Tokenizes text the way training documents were tokenized.
    pub fn tokenize(&self, text: &str) -> TokenStream {
        let cfg = PreprocessConfig {
            stopwords: self.stopwords.iter().cloned().collect(),
            min_word_length: 1,
        };
        preprocess(text, &cfg)
    }

    /// Optimizes a fresh document vector for `tokens` with the word vectors
    /// frozen. Out-of-vocabulary tokens are ignored.
    pub fn infer(&self, tokens: &[String], epochs: usize, seed: u64) -> Inferred {
        let dim = self.hyper.dim;
        let ids: Vec<usize> = tokens.iter().filter_map(|t| self.word_index.get(t).copied()).collect();
        if ids.is_empty() {
            return Inferred {
                vector: vec![0.0; dim],
                all_oov: true,
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vector = vec![0.0; dim];
        init_vector(&mut rng, dim, &mut vector);
        let sampler = NoiseSampler::new(&self.counts);
        let mut words = FrozenRows {
            data: &self.word_out,
            dim,
        };
        let mut negs = vec![0usize; self.hyper.negative];
        let mut scratch = vec![0.0; dim];
        let total = epochs * ids.len();
        let mut step = 0;
        for _ in 0..epochs {
            for &target in &ids {
                let lr = linear_lr(self.hyper.lr0, step, total);
                sampler.fill(&mut rng, &mut negs);
                sgd_step(&mut words, &mut vector, target, &negs, lr, &mut scratch);
                step += 1;
            }
        }
        Inferred {
            vector,
            all_oov: false,
        }
    }

    /// Inference with the model's default epoch count.
    pub fn infer_default(&self, tokens: &[String], seed: u64) -> Inferred {
        self.infer(tokens, self.hyper.infer_epochs, seed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        let h = &self.hyper;
        put_u64(&mut w, h.dim as u64);
        put_u64(&mut w, h.negative as u64);
        put_f64(&mut w, h.lr0);
        put_u64(&mut w, h.epochs as u64);
        put_u64(&mut w, h.seed);
        put_u64(&mut w, h.infer_epochs as u64);
        put_u64(&mut w, h.min_count as u64);
        put_f64(&mut w, h.subsample);
        match h.mode {
            TrainingMode::Deterministic => put_u64(&mut w, 0),
            TrainingMode::Parallel { threads } => put_u64(&mut w, threads as u64),
        }
        put_u64(&mut w, self.stopwords.len() as u64);
        self.stopwords.iter().for_each(|s| put_str(&mut w, s));
        put_u64(&mut w, self.vocab.len() as u64);
        for (t, &c) in self.vocab.iter().zip(&self.counts) {
            put_str(&mut w, t);
            put_u64(&mut w, c);
        }
        self.word_out.iter().for_each(|&v| put_f64(&mut w, v));
        put_u64(&mut w, self.doc_ids.len() as u64);
        self.doc_ids.iter().for_each(|d| put_str(&mut w, d));
        self.doc_vectors.iter().for_each(|&v| put_f64(&mut w, v));
        put_u64(&mut w, self.epoch_losses.len() as u64);
        self.epoch_losses.iter().for_each(|&v| put_f64(&mut w, v));
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(EmbedError::Artifact("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(EmbedError::Artifact(format!("unsupported version {version}")));
        }
        let dim = r.usize()?;
        let negative = r.usize()?;
        let lr0 = r.f64()?;
        let epochs = r.usize()?;
        let seed = r.u64()?;
        let infer_epochs = r.usize()?;
        let min_count = r.usize()?;
        let subsample = r.f64()?;
        let mode = match r.usize()? {
            0 => TrainingMode::Deterministic,
            threads => TrainingMode::Parallel { threads },
        };
        let hyper = Hyperparams {
            dim,
            negative,
            lr0,
            epochs,
            seed,
            infer_epochs,
            min_count,
            subsample,
            mode,
        };
        if dim == 0 {
            return Err(EmbedError::Artifact("zero dimension".into()));
        }
        let n_stop = r.usize()?;
        let stopwords = (0..n_stop).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let n_vocab = r.usize()?;
        let mut vocab = Vec::with_capacity(n_vocab.min(1 << 20));
        let mut counts = Vec::with_capacity(n_vocab.min(1 << 20));
        for _ in 0..n_vocab {
            vocab.push(r.string()?);
            counts.push(r.u64()?);
        }
        let word_out = r.f64s(n_vocab * dim)?;
        let n_docs = r.usize()?;
        let doc_ids = (0..n_docs).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let doc_vectors = r.f64s(n_docs * dim)?;
        let n_losses = r.usize()?;
        let epoch_losses = r.f64s(n_losses)?;
        if r.pos != bytes.len() {
            return Err(EmbedError::Artifact("trailing bytes".into()));
        }
        let word_index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(EmbeddingModel {
            hyper,
            stopwords,
            vocab,
            counts,
            word_index,
            word_out,
            doc_ids,
            doc_vectors,
            epoch_losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[allow(clippy::too_many_arguments)]
fn train_single(
    encoded: &[Vec<usize>],
    doc_vectors: &mut [f64],
    word_out: &mut [f64],
    sampler: &NoiseSampler,
    keep_prob: &[f64],
    hyper: &Hyperparams,
    total_steps: usize,
    rng: &mut ChaCha8Rng,
    docs: &[TrainingDoc],
) -> Result<Vec<f64>, EmbedError> {
    let dim = hyper.dim;
    let mut words = PlainRows { data: word_out, dim };
    let mut negs = vec![0usize; hyper.negative];
    let mut scratch = vec![0.0; dim];
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut step = 0usize;
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        let (mut loss, mut n) = (0.0, 0usize);
        for &d in &order {
            let doc = &mut doc_vectors[d * dim..(d + 1) * dim];
            for &target in &encoded[d] {
                let lr = linear_lr(hyper.lr0, step, total_steps);
                step += 1;
                if keep_prob[target] < 1.0 && rng.random::<f64>() > keep_prob[target] {
                    continue;
                }
                sampler.fill(rng, &mut negs);
                loss += sgd_step(&mut words, doc, target, &negs, lr, &mut scratch);
                n += 1;
            }
            if doc.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite {
                    epoch: epoch + 1,
                    doc: docs[d].isbn.clone(),
                });
            }
        }
        losses.push(if n > 0 { loss / n as f64 } else { 0.0 });
    }
    Ok(losses)
}

#[allow(clippy::too_many_arguments)]
fn train_parallel(
    encoded: &[Vec<usize>],
    doc_vectors: &mut [f64],
    word_out: &mut [f64],
    sampler: &NoiseSampler,
    keep_prob: &[f64],
    hyper: &Hyperparams,
    total_steps: usize,
    threads: usize,
    docs: &[TrainingDoc],
) -> Result<Vec<f64>, EmbedError> {
    let dim = hyper.dim;
    let shared: Vec<AtomicU64> = word_out.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
    let step = AtomicUsize::new(0);
    let docs_per_thread = encoded.len().div_ceil(threads);
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let results: Vec<Result<(f64, usize), EmbedError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = doc_vectors
                .chunks_mut(docs_per_thread * dim)
                .enumerate()
                .map(|(t, chunk)| {
                    let shared = &shared;
                    let step = &step;
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            hyper.seed ^ ((epoch as u64) << 32) ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                        );
                        let mut words = AtomicRows { data: shared, dim };
                        let mut negs = vec![0usize; hyper.negative];
                        let mut scratch = vec![0.0; dim];
                        let (mut loss, mut n) = (0.0, 0usize);
                        for (j, doc) in chunk.chunks_mut(dim).enumerate() {
                            let d = t * docs_per_thread + j;
                            for &target in &encoded[d] {
                                let s = step.fetch_add(1, Ordering::Relaxed);
                                let lr = linear_lr(hyper.lr0, s, total_steps);
                                if keep_prob[target] < 1.0 && rng.random::<f64>() > keep_prob[target] {
                                    continue;
                                }
                                sampler.fill(&mut rng, &mut negs);
                                loss += sgd_step(&mut words, doc, target, &negs, lr, &mut scratch);
                                n += 1;
                            }
                            if doc.iter().any(|v| !v.is_finite()) {
                                return Err(EmbedError::NonFinite {
                                    epoch: epoch + 1,
                                    doc: docs[d].isbn.clone(),
                                });
                            }
                        }
                        Ok((loss, n))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        let (mut loss, mut n) = (0.0, 0usize);
        for r in results {
            let (l, c) = r?;
            loss += l;
            n += c;
        }
        losses.push(if n > 0 { loss / n as f64 } else { 0.0 });
    }
    for (dst, src) in word_out.iter_mut().zip(&shared) {
        *dst = f64::from_bits(src.load(Ordering::Relaxed));
    }
    Ok(losses)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::LengthMismatch(a.len(), b.len()));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}
fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u64(w, s.len() as u64);
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| EmbedError::Artifact("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, EmbedError> {
        usize::try_from(self.u64()?).map_err(|_| EmbedError::Artifact("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64, EmbedError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, EmbedError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| EmbedError::Artifact("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn string(&mut self) -> Result<String, EmbedError> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| EmbedError::Artifact(e.to_string()))
    }
}
