//! The nineteen tag recommenders.
//!
//! * Popularity: global most-popular tags per source, optionally restricted
//!   to books sharing an author or a BISAC with the query.
//! * Similarity: top-N TF-IDF neighbors on title or description, whose tags
//!   are aggregated with the cross-source weight `W_t = |S_t| · Σ W_s`.
//! * Hybrid: the same cross-source weight applied across algorithms after
//!   max-normalizing each member's scores.
//!
//! `Combined` variants interleave the editor and the search-term list
//! round-robin, editor first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EBook, TagSource};
use crate::text::PreprocessConfig;
use crate::tfidf::{Neighbor, TextField, TfidfError, TfidfIndex, TfidfParams};

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("unknown algorithm id `{0}`")]
    UnknownAlgorithm(String),
    #[error("hybrid `{0}` needs a member selection")]
    MissingSelection(AlgorithmId),
    #[error("a hybrid needs at least 2 member lists, got {0}")]
    TooFewMembers(usize),
    #[error("selection slot `{slot}` holds `{id}`, which is not a valid member")]
    InvalidSelection { slot: &'static str, id: AlgorithmId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Editor,
    Amazon,
    Combined,
}

impl Source {
    fn tag_source(self) -> Option<TagSource> {
        match self {
            Source::Editor => Some(TagSource::Editor),
            Source::Amazon => Some(TagSource::Amazon),
            Source::Combined => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MpContext {
    None,
    Author,
    Bisac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HybridKind {
    /// Best no-context, best author and best BISAC popularity approach.
    Mp,
    /// Best title-based and best description-based similarity approach.
    Sim,
    /// The five members of `Mp` and `Sim`.
    All,
    /// Best popularity and best similarity approach.
    Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Mp,
    Sim,
    Hyb,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Mp => "Popularity-based",
            Family::Sim => "Similarity-based",
            Family::Hyb => "Hybrid",
        }
    }
}

/// One of the nineteen algorithms. Only valid combinations are
/// representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlgorithmId {
    Mp { context: MpContext, source: Source },
    Sim { field: TextField, source: Source },
    Hyb(HybridKind),
}

impl AlgorithmId {
    /// All nineteen ids: popularity, similarity, hybrid.
    pub fn all() -> Vec<AlgorithmId> {
        let sources = [Source::Editor, Source::Amazon, Source::Combined];
        let mut out = Vec::with_capacity(19);
        for context in [MpContext::None, MpContext::Author, MpContext::Bisac] {
            for source in sources {
                out.push(AlgorithmId::Mp { context, source });
            }
        }
        for field in [TextField::Description, TextField::Title] {
            for source in sources {
                out.push(AlgorithmId::Sim { field, source });
            }
        }
        for kind in [HybridKind::Mp, HybridKind::Sim, HybridKind::All, HybridKind::Best] {
            out.push(AlgorithmId::Hyb(kind));
        }
        out
    }

    /// The fifteen non-hybrid ids.
    pub fn base() -> Vec<AlgorithmId> {
        Self::all().into_iter().filter(|a| a.family() != Family::Hyb).collect()
    }

    pub fn family(&self) -> Family {
        match self {
            AlgorithmId::Mp { .. } => Family::Mp,
            AlgorithmId::Sim { .. } => Family::Sim,
            AlgorithmId::Hyb(_) => Family::Hyb,
        }
    }

    pub fn source(&self) -> Option<Source> {
        match self {
            AlgorithmId::Mp { source, .. } | AlgorithmId::Sim { source, .. } => Some(*source),
            AlgorithmId::Hyb(_) => None,
        }
    }
}

fn source_str(s: Source) -> &'static str {
    match s {
        Source::Editor => "editor",
        Source::Amazon => "amazon",
        Source::Combined => "combined",
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgorithmId::Mp { context, source } => {
                let ctx = match context {
                    MpContext::None => "",
                    MpContext::Author => "author-",
                    MpContext::Bisac => "bisac-",
                };
                write!(f, "mp-{ctx}{}", source_str(*source))
            }
            AlgorithmId::Sim { field, source } => {
                let fld = match field {
                    TextField::Description => "desc",
                    TextField::Title => "title",
                };
                write!(f, "sim-{fld}-{}", source_str(*source))
            }
            AlgorithmId::Hyb(kind) => f.write_str(match kind {
                HybridKind::Mp => "hyb-mp",
                HybridKind::Sim => "hyb-sim",
                HybridKind::All => "hyb-all",
                HybridKind::Best => "hyb-best",
            }),
        }
    }
}

impl FromStr for AlgorithmId {
    type Err = RecommendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgorithmId::all()
            .into_iter()
            .find(|a| a.to_string() == s.trim())
            .ok_or_else(|| RecommendError::UnknownAlgorithm(s.to_string()))
    }
}

impl Serialize for AlgorithmId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AlgorithmId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ListFlag {
    /// The query has no usable text for the similarity index.
    QueryNotIndexable,
}

/// Ranked tags with non-increasing scores; equal scores are ordered by tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTagList {
    pub algorithm: String,
    pub k_max: usize,
    entries: Vec<ScoredTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<ListFlag>,
}

fn by_score_then_tag(a: &ScoredTag, b: &ScoredTag) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tag.cmp(&b.tag))
}

impl ScoredTagList {
    pub fn empty(algorithm: impl Into<String>, k_max: usize) -> Self {
        ScoredTagList {
            algorithm: algorithm.into(),
            k_max,
            entries: Vec::new(),
            flag: None,
        }
    }

    /// Sorts `(tag, score)` pairs and keeps the top `k`. Duplicate tags keep
    /// their highest score.
    pub fn from_scores(algorithm: impl Into<String>, k: usize, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut best: HashMap<String, f64> = HashMap::new();
        for (tag, score) in scores {
            let e = best.entry(tag).or_insert(score);
            if score > *e {
                *e = score;
            }
        }
        let mut entries: Vec<ScoredTag> = best.into_iter().map(|(tag, score)| ScoredTag { tag, score }).collect();
        entries.sort_by(by_score_then_tag);
        entries.truncate(k);
        ScoredTagList {
            algorithm: algorithm.into(),
            k_max: k,
            entries,
            flag: None,
        }
    }

    pub fn with_flag(mut self, flag: ListFlag) -> Self {
        self.flag = Some(flag);
        self
    }

    fn relabel(mut self, algorithm: impl Into<String>, k: usize) -> Self {
        self.algorithm = algorithm.into();
        self.k_max = k;
        self.entries.truncate(k);
        self
    }

    pub fn entries(&self) -> &[ScoredTag] {
        &self.entries
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.tag.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniqueness, score order and tie order.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.tag.as_str()) {
                return Err(format!("duplicate tag {}", e.tag));
            }
            if !(e.score >= 0.0 && e.score.is_finite()) {
                return Err(format!("bad score {} for {}", e.score, e.tag));
            }
        }
        for w in self.entries.windows(2) {
            if by_score_then_tag(&w[0], &w[1]) != Ordering::Less {
                return Err(format!("order violated between {} and {}", w[0].tag, w[1].tag));
            }
        }
        if self.entries.len() > self.k_max {
            return Err("longer than k_max".into());
        }
        Ok(())
    }
}

/// Tags ranked by global assignment count, best first.
fn ranked_counts(counts: &BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.iter().map(|(t, &c)| (t.clone(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

pub fn most_popular(corpus: &Corpus, source: TagSource, k: usize) -> ScoredTagList {
    let ranked = ranked_counts(corpus.source_counts(source));
    popular_from_ranked(&ranked, source, k)
}

fn popular_from_ranked(ranked: &[(String, usize)], source: TagSource, k: usize) -> ScoredTagList {
    let algorithm = AlgorithmId::Mp {
        context: MpContext::None,
        source: source_of(source),
    };
    ScoredTagList {
        algorithm: algorithm.to_string(),
        k_max: k,
        entries: ranked
            .iter()
            .take(k)
            .map(|(t, c)| ScoredTag {
                tag: t.clone(),
                score: *c as f64,
            })
            .collect(),
        flag: None,
    }
}

fn source_of(s: TagSource) -> Source {
    match s {
        TagSource::Editor => Source::Editor,
        TagSource::Amazon => Source::Amazon,
    }
}

pub fn most_popular_context(
    corpus: &Corpus,
    source: TagSource,
    context: MpContext,
    query: &EBook,
    k: usize,
) -> ScoredTagList {
    let ranked = ranked_counts(corpus.source_counts(source));
    context_from_ranked(corpus, &ranked, source, context, query, k)
}

/// Context-restricted counts, padded with global popularity. Padded scores
/// are `count / (max_count + 1)` so they rank below every context count.
fn context_from_ranked(
    corpus: &Corpus,
    global: &[(String, usize)],
    source: TagSource,
    context: MpContext,
    query: &EBook,
    k: usize,
) -> ScoredTagList {
    let algorithm = AlgorithmId::Mp {
        context,
        source: source_of(source),
    };
    let keys: &[String] = match context {
        MpContext::None => &[],
        MpContext::Author => &query.authors,
        MpContext::Bisac => &query.bisacs,
    };
    let mut pool: BTreeSet<&str> = BTreeSet::new();
    for key in keys {
        let books = match context {
            MpContext::Author => corpus.books_by_author(key),
            _ => corpus.books_by_bisac(key),
        };
        if let Some(books) = books {
            pool.extend(books.iter().map(String::as_str).filter(|&i| i != query.isbn));
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for isbn in pool {
        if let Some(b) = corpus.get(isbn) {
            for t in b.tags(source) {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return popular_from_ranked(global, source, k).relabel(algorithm.to_string(), k);
    }
    let mut list = ScoredTagList::from_scores(
        algorithm.to_string(),
        k,
        counts.iter().map(|(t, &c)| (t.to_string(), c as f64)),
    );
    if list.len() < k {
        let max = global.first().map(|g| g.1).unwrap_or(0) as f64;
        let present: BTreeSet<String> = list.tags().map(String::from).collect();
        let pad = global
            .iter()
            .filter(|(t, _)| !present.contains(t))
            .take(k - list.len())
            .map(|(t, c)| ScoredTag {
                tag: t.clone(),
                score: *c as f64 / (max + 1.0),
            });
        list.entries.extend(pad.collect::<Vec<_>>());
    }
    list
}

/// Interleaves the lists position by position in the given order, skipping
/// tags already emitted, until `k` tags are out. Scores become `k, k-1, …`.
pub fn round_robin(lists: &[ScoredTagList], k: usize) -> ScoredTagList {
    let mut out: Vec<String> = Vec::with_capacity(k);
    let mut seen = BTreeSet::new();
    let depth = lists.iter().map(ScoredTagList::len).max().unwrap_or(0);
    'outer: for pos in 0..depth {
        for list in lists {
            if out.len() >= k {
                break 'outer;
            }
            if let Some(e) = list.entries.get(pos) {
                if seen.insert(e.tag.clone()) {
                    out.push(e.tag.clone());
                }
            }
        }
    }
    ScoredTagList {
        algorithm: "round-robin".into(),
        k_max: k,
        entries: out
            .into_iter()
            .enumerate()
            .map(|(i, tag)| ScoredTag {
                tag,
                score: (k - i) as f64,
            })
            .collect(),
        flag: None,
    }
}

/// Cross-source aggregation over similar books: each tag scores the number
/// of distinct neighbors carrying it times the sum of their similarities.
pub fn cross_source_tags<'a>(
    neighbors: &[Neighbor],
    tag_lookup: impl Fn(&str) -> &'a [String],
    k: usize,
) -> ScoredTagList {
    let mut acc: HashMap<&str, (usize, f64)> = HashMap::new();
    let mut seen_books = BTreeSet::new();
    for nb in neighbors {
        if !seen_books.insert(nb.isbn.as_str()) {
            continue;
        }
        for tag in tag_lookup(&nb.isbn) {
            let e = acc.entry(tag.as_str()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += nb.similarity;
        }
    }
    ScoredTagList::from_scores(
        "cross-source",
        k,
        acc.into_iter().map(|(t, (n, sum))| (t.to_string(), n as f64 * sum)),
    )
}

/// Cross-source aggregation with algorithms as sources. Each member is
/// divided by its maximum score first; empty members are skipped.
pub fn cross_algorithm_hybrid(members: &[ScoredTagList], k: usize) -> Result<ScoredTagList, RecommendError> {
    if members.len() < 2 {
        return Err(RecommendError::TooFewMembers(members.len()));
    }
    let mut acc: HashMap<&str, (usize, f64)> = HashMap::new();
    for m in members {
        let max = m.entries.iter().map(|e| e.score).fold(0.0, f64::max);
        if m.is_empty() || max <= 0.0 {
            continue;
        }
        for e in &m.entries {
            let a = acc.entry(e.tag.as_str()).or_insert((0, 0.0));
            a.0 += 1;
            a.1 += e.score / max;
        }
    }
    Ok(ScoredTagList::from_scores(
        "hybrid",
        k,
        acc.into_iter().map(|(t, (n, sum))| (t.to_string(), n as f64 * sum)),
    ))
}

/// Which base algorithms feed each hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSelection {
    pub mp_none: AlgorithmId,
    pub mp_author: AlgorithmId,
    pub mp_bisac: AlgorithmId,
    pub sim_title: AlgorithmId,
    pub sim_description: AlgorithmId,
    pub best_mp: AlgorithmId,
    pub best_sim: AlgorithmId,
}

impl Default for HybridSelection {
    /// The combinations that performed best on the original e-book data.
    fn default() -> Self {
        HybridSelection {
            mp_none: AlgorithmId::Mp { context: MpContext::None, source: Source::Combined },
            mp_author: AlgorithmId::Mp { context: MpContext::Author, source: Source::Combined },
            mp_bisac: AlgorithmId::Mp { context: MpContext::Bisac, source: Source::Editor },
            sim_title: AlgorithmId::Sim { field: TextField::Title, source: Source::Editor },
            sim_description: AlgorithmId::Sim { field: TextField::Description, source: Source::Editor },
            best_mp: AlgorithmId::Mp { context: MpContext::Author, source: Source::Combined },
            best_sim: AlgorithmId::Sim { field: TextField::Description, source: Source::Editor },
        }
    }
}

impl HybridSelection {
    /// Picks the highest-scoring member for every slot; ties go to the
    /// lexicographically smaller id. Ids missing from `scores` count as 0.
    pub fn from_scores(scores: &BTreeMap<AlgorithmId, f64>) -> HybridSelection {
        let best = |pred: &dyn Fn(&AlgorithmId) -> bool| -> AlgorithmId {
            let mut cands: Vec<(AlgorithmId, f64)> = AlgorithmId::base()
                .into_iter()
                .filter(|a| pred(a))
                .map(|a| (a, scores.get(&a).copied().unwrap_or(0.0)))
                .collect();
            cands.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.0.to_string().cmp(&b.0.to_string()))
            });
            cands[0].0
        };
        let mp_ctx = |c: MpContext| move |a: &AlgorithmId| matches!(a, AlgorithmId::Mp { context, .. } if *context == c);
        let sim_fld = |f: TextField| move |a: &AlgorithmId| matches!(a, AlgorithmId::Sim { field, .. } if *field == f);
        HybridSelection {
            mp_none: best(&mp_ctx(MpContext::None)),
            mp_author: best(&mp_ctx(MpContext::Author)),
            mp_bisac: best(&mp_ctx(MpContext::Bisac)),
            sim_title: best(&sim_fld(TextField::Title)),
            sim_description: best(&sim_fld(TextField::Description)),
            best_mp: best(&|a| a.family() == Family::Mp),
            best_sim: best(&|a| a.family() == Family::Sim),
        }
    }

    pub fn members(&self, kind: HybridKind) -> Vec<AlgorithmId> {
        match kind {
            HybridKind::Mp => vec![self.mp_none, self.mp_author, self.mp_bisac],
            HybridKind::Sim => vec![self.sim_title, self.sim_description],
            HybridKind::All => vec![
                self.mp_none,
                self.mp_author,
                self.mp_bisac,
                self.sim_title,
                self.sim_description,
            ],
            HybridKind::Best => vec![self.best_mp, self.best_sim],
        }
    }

    pub fn validate(&self) -> Result<(), RecommendError> {
        let slots: [(&'static str, AlgorithmId, bool); 7] = [
            ("mp_none", self.mp_none, matches!(self.mp_none, AlgorithmId::Mp { context: MpContext::None, .. })),
            ("mp_author", self.mp_author, matches!(self.mp_author, AlgorithmId::Mp { context: MpContext::Author, .. })),
            ("mp_bisac", self.mp_bisac, matches!(self.mp_bisac, AlgorithmId::Mp { context: MpContext::Bisac, .. })),
            ("sim_title", self.sim_title, matches!(self.sim_title, AlgorithmId::Sim { field: TextField::Title, .. })),
            (
                "sim_description",
                self.sim_description,
                matches!(self.sim_description, AlgorithmId::Sim { field: TextField::Description, .. }),
            ),
            ("best_mp", self.best_mp, self.best_mp.family() == Family::Mp),
            ("best_sim", self.best_sim, self.best_sim.family() == Family::Sim),
        ];
        for (slot, id, ok) in slots {
            if !ok {
                return Err(RecommendError::InvalidSelection { slot, id });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    pub tfidf: TfidfParams,
    /// Neighbors consulted by the similarity recommenders.
    pub top_n: usize,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig {
            tfidf: TfidfParams::default(),
            top_n: 20,
        }
    }
}

/// Everything the recommenders read. Built from a corpus whose review
/// keywords have already been removed.
#[derive(Debug)]
pub struct Resources {
    corpus: Corpus,
    global: [Vec<(String, usize)>; 2],
    title_index: Result<TfidfIndex, String>,
    description_index: Result<TfidfIndex, String>,
    top_n: usize,
    selection: Option<HybridSelection>,
}

impl Resources {
    /// Strips review keywords from `corpus` and builds the popularity
    /// tables and both TF-IDF indices. A field whose index cannot be built
    /// makes its similarity recommenders return flagged empty lists.
    pub fn build(corpus: &Corpus, config: &RecommendConfig, preprocessing: &PreprocessConfig) -> Resources {
        let corpus = corpus.without_review_keywords();
        let build = |field| {
            TfidfIndex::build(&corpus, field, config.tfidf, preprocessing).map_err(|e: TfidfError| {
                log::warn!("{field} index unavailable: {e}");
                e.to_string()
            })
        };
        let title_index = build(TextField::Title);
        let description_index = build(TextField::Description);
        Resources {
            global: [
                ranked_counts(corpus.source_counts(TagSource::Editor)),
                ranked_counts(corpus.source_counts(TagSource::Amazon)),
            ],
            corpus,
            title_index,
            description_index,
            top_n: config.top_n,
            selection: None,
        }
    }

    pub fn with_selection(mut self, selection: HybridSelection) -> Self {
        self.selection = Some(selection);
        self
    }

    pub fn set_selection(&mut self, selection: HybridSelection) {
        self.selection = Some(selection);
    }

    pub fn selection(&self) -> Option<&HybridSelection> {
        self.selection.as_ref()
    }

    /// The review-keyword-free corpus the recommenders see.
    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn index(&self, field: TextField) -> Option<&TfidfIndex> {
        match field {
            TextField::Title => self.title_index.as_ref().ok(),
            TextField::Description => self.description_index.as_ref().ok(),
        }
    }

    fn global(&self, source: TagSource) -> &[(String, usize)] {
        match source {
            TagSource::Editor => &self.global[0],
            TagSource::Amazon => &self.global[1],
        }
    }

    /// Lists for several algorithms on one query, sharing intermediate
    /// results between combined and hybrid algorithms.
    pub fn recommend_many(&self, query: &EBook, ids: &[AlgorithmId], k: usize) -> Result<Vec<ScoredTagList>, RecommendError> {
        let mut memo = HashMap::new();
        ids.iter().map(|&id| self.run(id, query, k, &mut memo)).collect()
    }

    fn run(
        &self,
        id: AlgorithmId,
        query: &EBook,
        k: usize,
        memo: &mut HashMap<AlgorithmId, ScoredTagList>,
    ) -> Result<ScoredTagList, RecommendError> {
        if let Some(hit) = memo.get(&id) {
            return Ok(hit.clone());
        }
        let name = id.to_string();
        let list = match id {
            AlgorithmId::Mp { context, source } => match source.tag_source() {
                Some(src) => match context {
                    MpContext::None => popular_from_ranked(self.global(src), src, k),
                    _ => context_from_ranked(&self.corpus, self.global(src), src, context, query, k),
                },
                None => {
                    let e = self.run(AlgorithmId::Mp { context, source: Source::Editor }, query, k, memo)?;
                    let a = self.run(AlgorithmId::Mp { context, source: Source::Amazon }, query, k, memo)?;
                    round_robin(&[e, a], k)
                }
            },
            AlgorithmId::Sim { field, source } => match source.tag_source() {
                Some(src) => self.sim_recommend(field, src, query, k),
                None => {
                    let e = self.run(AlgorithmId::Sim { field, source: Source::Editor }, query, k, memo)?;
                    let a = self.run(AlgorithmId::Sim { field, source: Source::Amazon }, query, k, memo)?;
                    let flag = e.flag.or(a.flag);
                    let mut rr = round_robin(&[e, a], k);
                    rr.flag = flag;
                    rr
                }
            },
            AlgorithmId::Hyb(kind) => {
                let selection = self.selection.ok_or(RecommendError::MissingSelection(id))?;
                let members = selection
                    .members(kind)
                    .into_iter()
                    .map(|m| self.run(m, query, k, memo))
                    .collect::<Result<Vec<_>, _>>()?;
                cross_algorithm_hybrid(&members, k)?
            }
        }
        .relabel(name, k);
        memo.insert(id, list.clone());
        Ok(list)
    }

    /// Similarity recommender: aggregate tags of the query's top-N TF-IDF
    /// neighbors. Books outside the index are vectorized from their text.
    pub fn sim_recommend(&self, field: TextField, source: TagSource, query: &EBook, k: usize) -> ScoredTagList {
        let name = AlgorithmId::Sim { field, source: source_of(source) }.to_string();
        let not_indexable = || ScoredTagList::empty(name.clone(), k).with_flag(ListFlag::QueryNotIndexable);
        let Some(index) = self.index(field) else {
            return not_indexable();
        };
        let neighbors = match index.vector(&query.isbn) {
            Some(v) => index.neighbors_of_vector(v, Some(&query.isbn), self.top_n),
            None => match index.vectorize(field.text(query)) {
                Some(v) => index.neighbors_of_vector(&v, Some(&query.isbn), self.top_n),
                None => return not_indexable(),
            },
        };
        let corpus = &self.corpus;
        cross_source_tags(
            &neighbors,
            |isbn| corpus.get(isbn).map(|b| b.tags(source)).unwrap_or(&[]),
            k,
        )
        .relabel(name, k)
    }
}

/// A configured recommender bound to shared resources.
#[derive(Debug, Clone, Copy)]
pub struct Recommender<'r> {
    id: AlgorithmId,
    resources: &'r Resources,
}

impl Recommender<'_> {
    pub fn id(&self) -> AlgorithmId {
        self.id
    }

    pub fn recommend(&self, query: &EBook, k: usize) -> ScoredTagList {
        let mut memo = HashMap::new();
        self.resources
            .run(self.id, query, k, &mut memo)
            .expect("hybrid selection checked at construction")
    }
}

pub fn make_algorithm(id: AlgorithmId, resources: &Resources) -> Result<Recommender<'_>, RecommendError> {
    if let AlgorithmId::Hyb(_) = id {
        let sel = resources.selection.ok_or(RecommendError::MissingSelection(id))?;
        sel.validate()?;
    }
    Ok(Recommender { id, resources })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(tags: &[(&str, f64)]) -> ScoredTagList {
        ScoredTagList::from_scores("t", 100, tags.iter().map(|(t, s)| (t.to_string(), *s)))
    }

    fn tags(l: &ScoredTagList) -> Vec<&str> {
        l.tags().collect()
    }

    fn book(isbn: &str, authors: &[&str], editor: &[&str], amazon: &[&str]) -> EBook {
        EBook {
            isbn: isbn.into(),
            title: format!("title {isbn}"),
            authors: authors.iter().map(|s| s.to_string()).collect(),
            editor_tags: editor.iter().map(|s| s.to_string()).collect(),
            search_terms: amazon.iter().map(|s| s.to_string()).collect(),
            ..EBook::default()
        }
    }

    #[test]
    fn nineteen_distinct_ids_round_trip_through_strings() {
        let all = AlgorithmId::all();
        assert_eq!(all.len(), 19);
        let names: BTreeSet<String> = all.iter().map(|a| a.to_string()).collect();
        assert_eq!(names.len(), 19);
        for a in &all {
            assert_eq!(a.to_string().parse::<AlgorithmId>().unwrap(), *a);
        }
        assert!(names.contains("mp-author-editor"));
        assert!(names.contains("sim-desc-combined"));
        assert!(names.contains("hyb-best"));
        assert!(matches!("mp-foo".parse::<AlgorithmId>(), Err(RecommendError::UnknownAlgorithm(_))));
        assert_eq!(AlgorithmId::base().len(), 15);
    }

    #[test]
    fn most_popular_with_lexicographic_ties() {
        let corpus = Corpus::from_books(vec![
            book("1", &[], &["crime", "love"], &[]),
            book("2", &[], &["crime", "war"], &[]),
            book("3", &[], &["crime", "love", "war"], &[]),
        ])
        .unwrap();
        let l = most_popular(&corpus, TagSource::Editor, 2);
        assert_eq!(l.entries(), &[
            ScoredTag { tag: "crime".into(), score: 3.0 },
            ScoredTag { tag: "love".into(), score: 2.0 },
        ]);
        assert_eq!(most_popular(&corpus, TagSource::Editor, 10).len(), 3);
        assert!(most_popular(&corpus, TagSource::Amazon, 10).is_empty());
    }

    #[test]
    fn author_context_ranks_author_tags_first() {
        let corpus = Corpus::from_books(vec![
            book("1", &["X"], &["noir", "city"], &[]),
            book("2", &["X"], &["noir"], &[]),
            book("3", &["Y"], &["love", "city"], &[]),
            book("4", &["Y"], &["love", "city"], &[]),
            book("5", &["X"], &["ignored-self-tag"], &[]),
        ])
        .unwrap();
        let q = corpus.get("5").unwrap();
        let l = most_popular_context(&corpus, TagSource::Editor, MpContext::Author, q, 3);
        assert_eq!(tags(&l), vec!["noir", "city", "love"]);
        assert_eq!(l.entries()[0].score, 2.0);
        assert!(l.entries()[2].score < 1.0);
        l.check_invariants().unwrap();
    }

    #[test]
    fn missing_context_falls_back_to_global() {
        let corpus = Corpus::from_books(vec![
            book("1", &["X"], &["noir", "city"], &[]),
            book("2", &[], &["city"], &[]),
        ])
        .unwrap();
        let q = corpus.get("2").unwrap();
        let ctx = most_popular_context(&corpus, TagSource::Editor, MpContext::Author, q, 5);
        let global = most_popular(&corpus, TagSource::Editor, 5);
        assert_eq!(ctx.entries(), global.entries());
        let ctx = most_popular_context(&corpus, TagSource::Editor, MpContext::Bisac, q, 5);
        assert_eq!(ctx.entries(), global.entries());
    }

    #[test]
    fn single_author_tag_is_padded() {
        let corpus = Corpus::from_books(vec![
            book("1", &["X"], &["rare"], &[]),
            book("2", &["X"], &[], &[]),
            book("3", &[], &["common", "other", "rare"], &[]),
            book("4", &[], &["common", "other"], &[]),
            book("5", &[], &["common"], &[]),
        ])
        .unwrap();
        let l = most_popular_context(&corpus, TagSource::Editor, MpContext::Author, corpus.get("2").unwrap(), 3);
        assert_eq!(tags(&l), vec!["rare", "common", "other"]);
        l.check_invariants().unwrap();
    }

    #[test]
    fn round_robin_interleaves_and_dedups() {
        let a = list(&[("a1", 2.0), ("a2", 1.0)]);
        let b = list(&[("b1", 2.0), ("b2", 1.0)]);
        let rr = round_robin(&[a.clone(), b], 4);
        assert_eq!(tags(&rr), vec!["a1", "b1", "a2", "b2"]);
        assert_eq!(rr.entries().iter().map(|e| e.score).collect::<Vec<_>>(), vec![4.0, 3.0, 2.0, 1.0]);

        let x = list(&[("x", 1.0)]);
        let xy = list(&[("x", 2.0), ("y", 1.0)]);
        assert_eq!(tags(&round_robin(&[x, xy], 3)), vec!["x", "y"]);

        let empty = ScoredTagList::empty("e", 10);
        assert_eq!(tags(&round_robin(&[empty, a.clone()], 1)), vec!["a1"]);
        assert_eq!(tags(&round_robin(&[a.clone(), a.clone()], 5)), tags(&a));
    }

    fn nb(isbn: &str, similarity: f64) -> Neighbor {
        Neighbor { isbn: isbn.into(), similarity }
    }

    #[test]
    fn cross_source_weights() {
        let lookup: HashMap<&str, Vec<String>> = [
            ("a", vec!["t".to_string(), "u".to_string()]),
            ("b", vec!["t".to_string()]),
            ("c", vec!["v".to_string()]),
        ]
        .into_iter()
        .collect();
        let l = cross_source_tags(&[nb("a", 0.5), nb("b", 0.3), nb("c", 0.9)], |i| &lookup[i], 10);
        let score = |t: &str| l.entries().iter().find(|e| e.tag == t).unwrap().score;
        assert!((score("t") - 1.6).abs() < 1e-12);
        assert!((score("v") - 0.9).abs() < 1e-12);
        assert!((score("u") - 0.5).abs() < 1e-12);
        assert_eq!(tags(&l), vec!["t", "v", "u"]);
    }

    #[test]
    fn multiplicity_beats_single_source_twin() {
        let lookup: HashMap<&str, Vec<String>> = [
            ("a", vec!["twice".to_string()]),
            ("b", vec!["twice".to_string()]),
            ("c", vec!["once".to_string()]),
        ]
        .into_iter()
        .collect();
        let w = 0.4;
        let l = cross_source_tags(&[nb("a", w), nb("b", w), nb("c", w)], |i| &lookup[i], 10);
        assert_eq!(l.entries()[0].tag, "twice");
        assert!((l.entries()[0].score - 2.0 * 2.0 * w).abs() < 1e-12);
        assert!((l.entries()[1].score - w).abs() < 1e-12);
    }

    #[test]
    fn hybrid_normalizes_members() {
        let m1 = list(&[("t", 10.0), ("a", 5.0)]);
        let m2 = list(&[("t", 0.3), ("b", 0.1)]);
        let m3 = list(&[("c", 7.0)]);
        let h = cross_algorithm_hybrid(&[m1, m2, m3], 10).unwrap();
        assert_eq!(h.entries()[0].tag, "t");
        assert!((h.entries()[0].score - 4.0).abs() < 1e-12);
        assert!(h.entries()[1..].iter().all(|e| e.score <= 1.0));
        assert_eq!(tags(&h)[1], "c");
    }

    #[test]
    fn hybrid_of_identical_lists_keeps_order() {
        let m = list(&[("z", 9.0), ("y", 4.0), ("x", 1.0)]);
        let h = cross_algorithm_hybrid(&[m.clone(), m.clone(), m.clone()], 10).unwrap();
        assert_eq!(tags(&h), tags(&m));
    }

    #[test]
    fn hybrid_skips_empty_members_and_needs_two() {
        let m1 = list(&[("a", 3.0), ("b", 1.0)]);
        let m2 = list(&[("b", 2.0), ("c", 1.0)]);
        let e = ScoredTagList::empty("e", 10);
        let with = cross_algorithm_hybrid(&[m1.clone(), e, m2.clone()], 10).unwrap();
        let without = cross_algorithm_hybrid(&[m1.clone(), m2], 10).unwrap();
        assert_eq!(with.entries(), without.entries());
        assert_eq!(cross_algorithm_hybrid(&[m1], 10), Err(RecommendError::TooFewMembers(1)));
        let all_empty = cross_algorithm_hybrid(&[ScoredTagList::empty("a", 3), ScoredTagList::empty("b", 3)], 3).unwrap();
        assert!(all_empty.is_empty());
    }

    #[test]
    fn selection_picks_best_per_slot() {
        let mut scores = BTreeMap::new();
        scores.insert("mp-amazon".parse().unwrap(), 0.2);
        scores.insert("mp-author-editor".parse().unwrap(), 0.5);
        scores.insert("sim-title-amazon".parse().unwrap(), 0.3);
        scores.insert("sim-desc-editor".parse().unwrap(), 0.6);
        let s = HybridSelection::from_scores(&scores);
        assert_eq!(s.mp_none.to_string(), "mp-amazon");
        assert_eq!(s.mp_author.to_string(), "mp-author-editor");
        // all BISAC variants tie at 0: lexicographic
        assert_eq!(s.mp_bisac.to_string(), "mp-bisac-amazon");
        assert_eq!(s.sim_title.to_string(), "sim-title-amazon");
        assert_eq!(s.best_mp.to_string(), "mp-author-editor");
        assert_eq!(s.best_sim.to_string(), "sim-desc-editor");
        s.validate().unwrap();
        assert_eq!(s.members(HybridKind::All).len(), 5);
        let bad = HybridSelection { mp_author: s.sim_title, ..s };
        assert!(bad.validate().is_err());
    }

    fn sim_corpus() -> Corpus {
        let mk = |isbn: &str, desc: &str, editor: &[&str], amazon: &[&str]| EBook {
            isbn: isbn.into(),
            title: "untitled".into(),
            description: desc.into(),
            editor_tags: editor.iter().map(|s| s.to_string()).collect(),
            search_terms: amazon.iter().map(|s| s.to_string()).collect(),
            ..EBook::default()
        };
        Corpus::from_books(vec![
            mk("1", "murder detective night shadow", &["crime", "noir"], &["thriller"]),
            mk("2", "murder detective night shadow", &["crime"], &[]),
            mk("3", "murder police", &["police"], &["cops"]),
            mk("4", "garden flowers spring", &["garden"], &["plants"]),
            mk("5", "garden spring sunshine", &["garden", "spring"], &[]),
            mk("6", "", &["orphan"], &[]),
        ])
        .unwrap()
    }

    fn loose_resources(corpus: &Corpus) -> Resources {
        let cfg = RecommendConfig {
            tfidf: TfidfParams { min_df: 1, min_word_length: 1 },
            top_n: 20,
        };
        Resources::build(corpus, &cfg, &PreprocessConfig::default())
    }

    #[test]
    fn identical_neighbor_dominates() {
        let corpus = sim_corpus();
        let res = loose_resources(&corpus);
        let l = res.sim_recommend(TextField::Description, TagSource::Editor, corpus.get("2").unwrap(), 10);
        assert_eq!(l.entries()[0].tag, "crime");
        assert!(tags(&l).contains(&"noir"));
        assert!(!tags(&l).contains(&"garden"));
    }

    #[test]
    fn neighbors_without_source_tags_give_nothing() {
        let corpus = sim_corpus();
        let res = loose_resources(&corpus);
        let l = res.sim_recommend(TextField::Description, TagSource::Amazon, corpus.get("5").unwrap(), 10);
        assert_eq!(tags(&l), vec!["plants"]);
        let l = res.sim_recommend(TextField::Description, TagSource::Amazon, corpus.get("3").unwrap(), 10);
        assert_eq!(tags(&l), vec!["thriller"]);
    }

    #[test]
    fn unindexable_query_is_flagged() {
        let corpus = sim_corpus();
        let res = loose_resources(&corpus);
        let l = res.sim_recommend(TextField::Description, TagSource::Editor, corpus.get("6").unwrap(), 10);
        assert!(l.is_empty());
        assert_eq!(l.flag, Some(ListFlag::QueryNotIndexable));
        // a new book outside the corpus is vectorized from its text
        let fresh = EBook { isbn: "new".into(), description: "garden flowers".into(), ..EBook::default() };
        let l = res.sim_recommend(TextField::Description, TagSource::Editor, &fresh, 10);
        assert_eq!(l.entries()[0].tag, "garden");
    }

    #[test]
    fn combined_is_round_robin_of_sources() {
        let corpus = Corpus::from_books(vec![
            book("1", &[], &["e1", "e2"], &["a1"]),
            book("2", &[], &["e1"], &["a1", "a2"]),
        ])
        .unwrap();
        let res = loose_resources(&corpus);
        let q = corpus.get("1").unwrap();
        let ids: Vec<AlgorithmId> = ["mp-editor", "mp-amazon", "mp-combined"].iter().map(|s| s.parse().unwrap()).collect();
        let out = res.recommend_many(q, &ids, 4).unwrap();
        assert_eq!(tags(&out[2]), vec!["e1", "a1", "e2", "a2"]);
        assert_eq!(out[2].algorithm, "mp-combined");
        assert_eq!(out[2], round_robin(&out[..2], 4).relabel("mp-combined", 4));
    }

    #[test]
    fn hybrids_need_a_selection() {
        let corpus = sim_corpus();
        let res = loose_resources(&corpus);
        let id = AlgorithmId::Hyb(HybridKind::Best);
        assert!(matches!(make_algorithm(id, &res), Err(RecommendError::MissingSelection(_))));
        let res = res.with_selection(HybridSelection::default());
        let rec = make_algorithm(id, &res).unwrap();
        let q = corpus.get("2").unwrap();
        let out = rec.recommend(q, 5);
        out.check_invariants().unwrap();
        let sel = HybridSelection::default();
        let members = res.recommend_many(q, &[sel.best_mp, sel.best_sim], 5).unwrap();
        let expect = cross_algorithm_hybrid(&members, 5).unwrap();
        assert_eq!(tags(&out), tags(&expect));
    }

    #[test]
    fn every_algorithm_satisfies_list_invariants_on_small_corpus() {
        let corpus = sim_corpus();
        let res = loose_resources(&corpus).with_selection(HybridSelection::default());
        for b in corpus.books() {
            for id in AlgorithmId::all() {
                let l = make_algorithm(id, &res).unwrap().recommend(b, 4);
                l.check_invariants().unwrap_or_else(|e| panic!("{id} on {}: {e}", b.isbn));
                assert_eq!(l.algorithm, id.to_string());
            }
        }
    }
}
