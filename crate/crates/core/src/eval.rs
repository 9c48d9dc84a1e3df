//! Evaluation protocol and metrics: nDCG@k, embedding-based semantic
//! similarity, intra-list diversity and Kendall's tau between metric-induced
//! rankings of the algorithms.
//!
//! Review keywords are the ground truth. Books with review keywords are split
//! by hashed isbn into a validation half, used only to pick hybrid members,
//! and a test half on which every reported number is computed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EBook};
use crate::embed::{cosine, EmbeddingModel, Inferred};
use crate::recommend::{AlgorithmId, Family, HybridSelection, RecommendError, Resources, ScoredTagList};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("the relevant tag set is empty")]
    EmptyRelevant,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no test cases: no book in the test split has review keywords")]
    NoTestCases,
    #[error("rankings differ in their id sets")]
    MismatchedRankings,
    #[error("a ranking needs at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("validation fraction {0} outside [0, 1)")]
    BadFraction(f64),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
}

/// Fixed seed for every inference made while scoring.
pub const INFER_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub book: EBook,
    pub relevant: BTreeSet<String>,
}

/// One case per book with at least one review keyword, in isbn order.
pub fn test_cases(corpus: &Corpus) -> Vec<TestCase> {
    corpus
        .books()
        .filter(|b| !b.review_keywords.is_empty())
        .map(|b| TestCase {
            book: b.clone(),
            relevant: b.review_keywords.iter().cloned().collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Validation,
    Test,
}

/// Deterministic hash split: FNV-1a over the isbn, mixed with the seed.
pub fn split_of(isbn: &str, seed: u64, validation_fraction: f64) -> Split {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in isbn.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let u = (z >> 11) as f64 / (1u64 << 53) as f64;
    if u < validation_fraction {
        Split::Validation
    } else {
        Split::Test
    }
}

/// nDCG at every cutoff `1..=k_max`. Position `i` counts as a hit when its
/// tag is in `relevant`; the ideal list has `min(k, |relevant|)` hits.
pub fn ndcg_curve<S: AsRef<str>>(recommended: &[S], relevant: &BTreeSet<String>, k_max: usize) -> Result<Vec<f64>, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    if k_max == 0 {
        return Err(EvalError::ZeroK);
    }
    let (mut dcg, mut idcg) = (0.0, 0.0);
    let mut out = Vec::with_capacity(k_max);
    for i in 1..=k_max {
        let discount = 1.0 / ((1 + i) as f64).log2();
        if recommended.get(i - 1).is_some_and(|t| relevant.contains(t.as_ref())) {
            dcg += discount;
        }
        if i <= relevant.len() {
            idcg += discount;
        }
        out.push(dcg / idcg);
    }
    Ok(out)
}

pub fn ndcg_at_k(recommended: &ScoredTagList, relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    let tags: Vec<&str> = recommended.tags().collect();
    Ok(*ndcg_curve(&tags, relevant, k)?.last().expect("k >= 1"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricFlag {
    /// No token of the input is in the embedding vocabulary.
    OutOfVocabulary,
    /// Fewer than two tags to compare.
    TooShort,
    /// The recommender returned nothing.
    EmptyList,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    /// Reported value, clamped to [0, 1].
    pub value: f64,
    /// Value before clamping.
    pub raw: f64,
    pub flag: Option<MetricFlag>,
}

impl MetricValue {
    fn clamped(raw: f64) -> Self {
        MetricValue {
            value: raw.clamp(0.0, 1.0),
            raw,
            flag: None,
        }
    }

    fn flagged(flag: MetricFlag) -> Self {
        MetricValue {
            value: 0.0,
            raw: 0.0,
            flag: Some(flag),
        }
    }
}

/// Per-tag inferred vectors. Inference uses a fixed seed, so the cache only
/// saves time and never changes results.
#[derive(Debug)]
pub struct TagVectors<'m> {
    model: &'m EmbeddingModel,
    seed: u64,
    cache: RwLock<HashMap<String, Inferred>>,
}

impl<'m> TagVectors<'m> {
    pub fn new(model: &'m EmbeddingModel, seed: u64) -> Self {
        TagVectors {
            model,
            seed,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &'m EmbeddingModel {
        self.model
    }

    pub fn get(&self, tag: &str) -> Inferred {
        if let Some(hit) = self.cache.read().expect("cache lock").get(tag) {
            return hit.clone();
        }
        let v = self.model.infer_default(&self.model.tokenize(tag), self.seed);
        self.cache.write().expect("cache lock").insert(tag.to_string(), v.clone());
        v
    }
}

fn pseudo_document<'a>(model: &EmbeddingModel, tags: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    tags.into_iter().flat_map(|t| model.tokenize(t)).collect()
}

/// Cosine between the inferred vector of all recommended tags (rank order)
/// and of all relevant tags (lexicographic order).
pub fn semantic_similarity(model: &EmbeddingModel, recommended: &ScoredTagList, relevant: &BTreeSet<String>) -> MetricValue {
    semantic_similarity_of(model, recommended.tags(), relevant, INFER_SEED)
}

pub fn semantic_similarity_of<'a>(
    model: &EmbeddingModel,
    recommended: impl IntoIterator<Item = &'a str>,
    relevant: &BTreeSet<String>,
    seed: u64,
) -> MetricValue {
    let rec = model.infer_default(&pseudo_document(model, recommended), seed);
    let rel = model.infer_default(&pseudo_document(model, relevant.iter().map(String::as_str)), seed);
    semantic_from_vectors(&rec, &rel)
}

fn semantic_from_vectors(rec: &Inferred, rel: &Inferred) -> MetricValue {
    if rec.all_oov || rel.all_oov {
        return MetricValue::flagged(MetricFlag::OutOfVocabulary);
    }
    MetricValue::clamped(cosine(&rec.vector, &rel.vector).expect("same model dims"))
}

/// Mean dissimilarity `1 - cos` over ordered pairs of the top-k tags.
pub fn diversity_at_k(vectors: &TagVectors<'_>, recommended: &ScoredTagList, k: usize) -> MetricValue {
    let tags: Vec<&str> = recommended.tags().take(k).collect();
    let inferred: Vec<Inferred> = tags.iter().map(|t| vectors.get(t)).collect();
    let refs: Vec<&[f64]> = inferred.iter().map(|v| v.vector.as_slice()).collect();
    diversity_of_vectors(&refs)
}

pub fn diversity_of_vectors(vectors: &[&[f64]]) -> MetricValue {
    let n = vectors.len();
    if n < 2 {
        return MetricValue::flagged(MetricFlag::TooShort);
    }
    let mut sum = Neumaier::default();
    for i in 0..n {
        for j in i + 1..n {
            // d is symmetric: each unordered pair stands for two ordered ones
            sum.add(2.0 * (1.0 - cosine(vectors[i], vectors[j]).expect("same model dims")));
        }
    }
    MetricValue::clamped(sum.total() / (n * (n - 1)) as f64)
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

fn mean(xs: &[f64]) -> f64 {
    let mut s = Neumaier::default();
    xs.iter().for_each(|&x| s.add(x));
    if xs.is_empty() {
        0.0
    } else {
        s.total() / xs.len() as f64
    }
}

/// Five-number summary plus mean. Quartiles follow the median-exclusive rule:
/// the halves left and right of the median (which is dropped for odd sizes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { mean: 0.0, min: 0.0, q1: 0.0, median: 0.0, q3: 0.0, max: 0.0 };
        }
        let mut xs = values.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let (lower, upper) = if n == 1 { (&xs[..], &xs[..]) } else { (&xs[..n / 2], &xs[n.div_ceil(2)..]) };
        Summary {
            mean: mean(values),
            min: xs[0],
            q1: median_sorted(lower),
            median: median_sorted(&xs),
            q3: median_sorted(upper),
            max: xs[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub k_max: usize,
    pub split_seed: u64,
    /// Share of reviewed books held out for hybrid member selection.
    pub validation_fraction: f64,
    pub infer_seed: u64,
    /// Pinned hybrid members; when absent they are chosen on the validation
    /// split.
    pub selection: Option<HybridSelection>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            k_max: 10,
            split_seed: 1,
            validation_fraction: 0.5,
            infer_seed: INFER_SEED,
            selection: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k_max == 0 {
            return Err(EvalError::ZeroK);
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(EvalError::BadFraction(self.validation_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Validation,
    Config,
    /// Validation split was empty.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub source: SelectionSource,
    pub selection: HybridSelection,
    pub n_validation_cases: usize,
    /// Mean validation nDCG@10 of every non-hybrid algorithm.
    pub validation_ndcg: BTreeMap<AlgorithmId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub algorithm: AlgorithmId,
    pub family: Family,
    /// Mean nDCG@k for k = 1..=k_max.
    pub ndcg: Vec<f64>,
    pub semantic_similarity: Summary,
    pub diversity: Summary,
    pub n_cases: usize,
    pub n_empty: usize,
    pub n_flagged: usize,
}

impl AlgorithmRow {
    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[k - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMetadata {
    pub k_max: usize,
    pub split_seed: u64,
    pub validation_fraction: f64,
    pub infer_seed: u64,
    pub n_test_cases: usize,
    pub n_validation_cases: usize,
    pub model_hash: String,
    pub selection: Option<SelectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: ProtocolMetadata,
    pub rows: Vec<AlgorithmRow>,
}

impl EvaluationReport {
    pub fn row(&self, id: AlgorithmId) -> Option<&AlgorithmRow> {
        self.rows.iter().find(|r| r.algorithm == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseScores {
    pub ndcg: Vec<f64>,
    pub semantic: MetricValue,
    pub diversity: MetricValue,
    pub empty: bool,
}

/// Scores one list against one case. Empty lists score 0 everywhere.
pub fn score_case(list: &ScoredTagList, case: &TestCase, vectors: &TagVectors<'_>, k_max: usize) -> Result<CaseScores, EvalError> {
    if list.is_empty() {
        return Ok(CaseScores {
            ndcg: vec![0.0; k_max],
            semantic: MetricValue::flagged(MetricFlag::EmptyList),
            diversity: MetricValue::flagged(MetricFlag::EmptyList),
            empty: true,
        });
    }
    let tags: Vec<&str> = list.tags().collect();
    Ok(CaseScores {
        ndcg: ndcg_curve(&tags, &case.relevant, k_max)?,
        semantic: semantic_similarity_of(vectors.model(), tags.iter().copied(), &case.relevant, vectors.seed),
        diversity: diversity_at_k(vectors, list, k_max),
        empty: false,
    })
}

/// Mean validation nDCG@k for every base algorithm.
pub fn validation_ndcg(resources: &Resources, cases: &[TestCase], k: usize) -> Result<BTreeMap<AlgorithmId, f64>, EvalError> {
    let base = AlgorithmId::base();
    let per_case: Vec<Vec<f64>> = cases
        .par_iter()
        .map(|case| {
            let query = resources.corpus().get(&case.book.isbn).unwrap_or(&case.book);
            let lists = resources.recommend_many(query, &base, k)?;
            lists
                .iter()
                .map(|l| ndcg_at_k(l, &case.relevant, k))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(base
        .iter()
        .enumerate()
        .map(|(j, id)| (*id, mean(&per_case.iter().map(|c| c[j]).collect::<Vec<_>>())))
        .collect())
}

/// Runs every algorithm on every test case. `resources` must have been built
/// from `corpus` (they hold its review-keyword-free copy). A hybrid selection
/// already attached to `resources` is replaced according to `config`.
pub fn run_protocol(
    corpus: &Corpus,
    resources: &mut Resources,
    algorithms: &[AlgorithmId],
    model: &EmbeddingModel,
    config: &ProtocolConfig,
) -> Result<EvaluationReport, EvalError> {
    config.validate()?;
    let (validation, test): (Vec<TestCase>, Vec<TestCase>) = test_cases(corpus)
        .into_iter()
        .partition(|c| split_of(&c.book.isbn, config.split_seed, config.validation_fraction) == Split::Validation);
    if test.is_empty() {
        return Err(EvalError::NoTestCases);
    }
    let needs_selection = algorithms.iter().any(|a| a.family() == Family::Hyb);
    let selection = if !needs_selection {
        None
    } else {
        let report = match config.selection {
            Some(sel) => {
                sel.validate()?;
                SelectionReport {
                    source: SelectionSource::Config,
                    selection: sel,
                    n_validation_cases: validation.len(),
                    validation_ndcg: BTreeMap::new(),
                }
            }
            None if validation.is_empty() => SelectionReport {
                source: SelectionSource::Fallback,
                selection: HybridSelection::default(),
                n_validation_cases: 0,
                validation_ndcg: BTreeMap::new(),
            },
            None => {
                let scores = validation_ndcg(resources, &validation, 10)?;
                SelectionReport {
                    source: SelectionSource::Validation,
                    selection: HybridSelection::from_scores(&scores),
                    n_validation_cases: validation.len(),
                    validation_ndcg: scores,
                }
            }
        };
        log::info!("hybrid members ({:?}): {:?}", report.source, report.selection);
        resources.set_selection(report.selection);
        Some(report)
    };
    let resources = &*resources;

    let vectors = TagVectors::new(model, config.infer_seed);
    let k_max = config.k_max;
    let per_case: Vec<Vec<CaseScores>> = test
        .par_iter()
        .map(|case| {
            let query = resources.corpus().get(&case.book.isbn).unwrap_or(&case.book);
            let lists = resources.recommend_many(query, algorithms, k_max)?;
            lists.iter().map(|l| score_case(l, case, &vectors, k_max)).collect()
        })
        .collect::<Result<_, EvalError>>()?;

    let rows = algorithms
        .iter()
        .enumerate()
        .map(|(j, &algorithm)| {
            let scores: Vec<&CaseScores> = per_case.iter().map(|c| &c[j]).collect();
            let ndcg = (0..k_max)
                .map(|k| mean(&scores.iter().map(|s| s.ndcg[k]).collect::<Vec<_>>()))
                .collect();
            let semantic: Vec<f64> = scores.iter().map(|s| s.semantic.value).collect();
            let diversity: Vec<f64> = scores.iter().map(|s| s.diversity.value).collect();
            AlgorithmRow {
                algorithm,
                family: algorithm.family(),
                ndcg,
                semantic_similarity: Summary::of(&semantic),
                diversity: Summary::of(&diversity),
                n_cases: scores.len(),
                n_empty: scores.iter().filter(|s| s.empty).count(),
                n_flagged: scores
                    .iter()
                    .filter(|s| s.semantic.flag.is_some() || s.diversity.flag.is_some())
                    .count(),
            }
        })
        .collect();

    Ok(EvaluationReport {
        metadata: ProtocolMetadata {
            k_max,
            split_seed: config.split_seed,
            validation_fraction: config.validation_fraction,
            infer_seed: config.infer_seed,
            n_test_cases: test.len(),
            n_validation_cases: validation.len(),
            model_hash: model.content_hash(),
            selection,
        },
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub tau: f64,
    pub p_value: f64,
    pub z: f64,
    pub n: usize,
    pub ranking_a: Vec<String>,
    pub ranking_b: Vec<String>,
}

/// Kendall's tau-a between two orderings of the same ids, with a two-sided
/// p-value from the normal approximation.
pub fn kendall_tau(ranking_a: &[String], ranking_b: &[String]) -> Result<RankCorrelation, EvalError> {
    let n = ranking_a.len();
    let pos_b: HashMap<&str, usize> = ranking_b.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let distinct_a: BTreeSet<&str> = ranking_a.iter().map(String::as_str).collect();
    if ranking_b.len() != n || pos_b.len() != n || distinct_a.len() != n || !distinct_a.iter().all(|s| pos_b.contains_key(s)) {
        return Err(EvalError::MismatchedRankings);
    }
    if n < 2 {
        return Err(EvalError::TooFewItems(n));
    }
    let b_order: Vec<usize> = ranking_a.iter().map(|s| pos_b[s.as_str()]).collect();
    let mut net: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            net += if b_order[i] < b_order[j] { 1 } else { -1 };
        }
    }
    let nf = n as f64;
    let tau = net as f64 / (nf * (nf - 1.0) / 2.0);
    let z = 3.0 * tau * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
    let p_value = libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(RankCorrelation {
        tau,
        p_value,
        z,
        n,
        ranking_a: ranking_a.to_vec(),
        ranking_b: ranking_b.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRanking {
    pub order: Vec<String>,
    /// Adjacent pairs with exactly equal values, broken lexicographically.
    pub ties: Vec<(String, String)>,
}

/// Orders ids by descending value; exact ties go to the smaller id.
pub fn rank_by_metric(values: &[(String, f64)]) -> MetricRanking {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let ties = v
        .windows(2)
        .filter(|w| w[0].1 == w[1].1)
        .map(|w| (w[0].0.clone(), w[1].0.clone()))
        .collect();
    MetricRanking {
        order: v.into_iter().map(|(id, _)| id).collect(),
        ties,
    }
}

/// Kendall's tau between the nDCG@k ranking and the mean semantic similarity
/// ranking of the report's algorithms.
pub fn ndcg_vs_semantic(report: &EvaluationReport, k: usize) -> Result<RankCorrelation, EvalError> {
    let by = |f: &dyn Fn(&AlgorithmRow) -> f64| {
        rank_by_metric(&report.rows.iter().map(|r| (r.algorithm.to_string(), f(r))).collect::<Vec<_>>())
    };
    let a = by(&|r| r.ndcg_at(k));
    let b = by(&|r| r.semantic_similarity.mean);
    kendall_tau(&a.order, &b.order)
}
