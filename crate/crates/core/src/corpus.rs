//! E-book data model, ingestion from JSONL/CSV, and dataset statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_tag, preprocess, PreprocessConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid generator parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },
    #[error("unknown corpus format `{0}` (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One catalog item.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EBook {
    pub isbn: String,
    pub title: String,
    pub description: String,
    pub authors: Vec<String>,
    pub bisacs: Vec<String>,
    pub editor_tags: Vec<String>,
    pub search_terms: Vec<String>,
    pub review_keywords: Vec<String>,
}

/// The two annotation vocabularies recommenders learn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TagSource {
    Editor,
    Amazon,
}

impl TagSource {
    pub const ALL: [TagSource; 2] = [TagSource::Editor, TagSource::Amazon];
}

impl fmt::Display for TagSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagSource::Editor => "editor",
            TagSource::Amazon => "amazon",
        })
    }
}

impl EBook {
    pub fn new(isbn: impl Into<String>, title: impl Into<String>) -> Self {
        EBook {
            isbn: isbn.into(),
            title: title.into(),
            ..EBook::default()
        }
    }

    pub fn tags(&self, source: TagSource) -> &[String] {
        match source {
            TagSource::Editor => &self.editor_tags,
            TagSource::Amazon => &self.search_terms,
        }
    }

    /// Applies tag normalization and per-list deduplication. Authors and
    /// BISACs keep their case but get trimmed and whitespace-collapsed.
    fn clean(mut self) -> Self {
        self.isbn = self.isbn.trim().to_string();
        self.title = self.title.trim().to_string();
        self.description = self.description.trim().to_string();
        self.authors = dedup(self.authors.iter().map(|a| collapse_ws(a)));
        self.bisacs = dedup(self.bisacs.iter().map(|b| collapse_ws(b)));
        self.editor_tags = dedup(self.editor_tags.iter().map(|t| normalize_tag(t)));
        self.search_terms = dedup(self.search_terms.iter().map(|t| normalize_tag(t)));
        self.review_keywords = dedup(self.review_keywords.iter().map(|t| normalize_tag(t)));
        self
    }

    fn merge(&mut self, other: EBook) {
        if self.description.is_empty() {
            self.description = other.description;
        }
        union_into(&mut self.authors, other.authors);
        union_into(&mut self.bisacs, other.bisacs);
        union_into(&mut self.editor_tags, other.editor_tags);
        union_into(&mut self.search_terms, other.search_terms);
        union_into(&mut self.review_keywords, other.review_keywords);
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dedup(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

fn union_into(into: &mut Vec<String>, from: Vec<String>) {
    for item in from {
        if !into.contains(&item) {
            into.push(item);
        }
    }
}

/// Non-fatal issues found while building a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    ConflictingTitle {
        isbn: String,
        kept: String,
        dropped: String,
    },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::ConflictingTitle {
                isbn,
                kept,
                dropped,
            } => write!(
                f,
                "isbn {isbn}: conflicting titles, kept {kept:?}, dropped {dropped:?}"
            ),
        }
    }
}

/// Validated, immutable collection of e-books with lookup indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    books: BTreeMap<String, EBook>,
    author_index: BTreeMap<String, BTreeSet<String>>,
    bisac_index: BTreeMap<String, BTreeSet<String>>,
    editor_counts: BTreeMap<String, usize>,
    amazon_counts: BTreeMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, merging duplicate isbns by union.
    pub fn from_books(books: impl IntoIterator<Item = EBook>) -> Result<Corpus, CorpusError> {
        Ok(Self::from_books_with_warnings(books)?.0)
    }

    pub fn from_books_with_warnings(
        books: impl IntoIterator<Item = EBook>,
    ) -> Result<(Corpus, Vec<IngestWarning>), CorpusError> {
        let mut merged: BTreeMap<String, EBook> = BTreeMap::new();
        let mut warnings = Vec::new();
        for (i, book) in books.into_iter().enumerate() {
            let book = book.clean();
            if book.isbn.is_empty() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: "empty isbn".into(),
                });
            }
            match merged.get_mut(&book.isbn) {
                Some(existing) => {
                    if existing.title != book.title {
                        let w = IngestWarning::ConflictingTitle {
                            isbn: book.isbn.clone(),
                            kept: existing.title.clone(),
                            dropped: book.title.clone(),
                        };
                        log::warn!("{w}");
                        warnings.push(w);
                    }
                    existing.merge(book);
                }
                None => {
                    merged.insert(book.isbn.clone(), book);
                }
            }
        }
        Ok((Self::index(merged), warnings))
    }

    fn index(books: BTreeMap<String, EBook>) -> Corpus {
        let mut corpus = Corpus {
            books,
            ..Corpus::default()
        };
        for book in corpus.books.values() {
            for a in &book.authors {
                corpus
                    .author_index
                    .entry(a.clone())
                    .or_default()
                    .insert(book.isbn.clone());
            }
            for b in &book.bisacs {
                corpus
                    .bisac_index
                    .entry(b.clone())
                    .or_default()
                    .insert(book.isbn.clone());
            }
            for t in &book.editor_tags {
                *corpus.editor_counts.entry(t.clone()).or_insert(0) += 1;
            }
            for t in &book.search_terms {
                *corpus.amazon_counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        corpus
    }

    pub fn len(&self) -> usize {
        self.books.len()
    }

    pub fn is_empty(&self) -> bool {
        self.books.is_empty()
    }

    pub fn get(&self, isbn: &str) -> Option<&EBook> {
        self.books.get(isbn)
    }

    /// Books in ascending isbn order.
    pub fn books(&self) -> impl Iterator<Item = &EBook> {
        self.books.values()
    }

    pub fn books_by_author(&self, author: &str) -> Option<&BTreeSet<String>> {
        self.author_index.get(author)
    }

    pub fn books_by_bisac(&self, bisac: &str) -> Option<&BTreeSet<String>> {
        self.bisac_index.get(bisac)
    }

    pub fn authors(&self) -> impl Iterator<Item = &String> {
        self.author_index.keys()
    }

    pub fn bisacs(&self) -> impl Iterator<Item = &String> {
        self.bisac_index.keys()
    }

    /// Global assignment count per tag for one source.
    pub fn source_counts(&self, source: TagSource) -> &BTreeMap<String, usize> {
        match source {
            TagSource::Editor => &self.editor_counts,
            TagSource::Amazon => &self.amazon_counts,
        }
    }

    /// Copy of the corpus with every review keyword removed. Recommenders
    /// are built from this view so evaluation targets never leak into them.
    pub fn without_review_keywords(&self) -> Corpus {
        let books = self
            .books
            .iter()
            .map(|(k, b)| {
                let mut b = b.clone();
                b.review_keywords.clear();
                (k.clone(), b)
            })
            .collect();
        Self::index(books)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for book in self.books.values() {
            out.push_str(&serde_json::to_string(book).expect("EBook serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> io::Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        w.write_record(CSV_HEADER).map_err(csv_io)?;
        for b in self.books.values() {
            w.write_record([
                b.isbn.as_str(),
                &b.title,
                &b.description,
                &b.authors.join(";"),
                &b.bisacs.join(";"),
                &b.editor_tags.join(";"),
                &b.search_terms.join(";"),
                &b.review_keywords.join(";"),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

const CSV_HEADER: [&str; 8] = [
    "isbn",
    "title",
    "description",
    "authors",
    "bisacs",
    "editor_tags",
    "search_terms",
    "review_keywords",
];

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl CorpusFormat {
    /// Guesses from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    isbn: Option<String>,
    title: Option<String>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    authors: Vec<String>,
    #[serde(default)]
    bisacs: Vec<String>,
    #[serde(default)]
    editor_tags: Vec<String>,
    #[serde(default)]
    search_terms: Vec<String>,
    #[serde(default)]
    review_keywords: Vec<String>,
}

impl RawRecord {
    fn into_book(self, line: usize) -> Result<EBook, CorpusError> {
        let isbn = self
            .isbn
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| CorpusError::Malformed {
                line,
                message: "missing isbn".into(),
            })?;
        let title = self.title.ok_or_else(|| CorpusError::Malformed {
            line,
            message: "missing title".into(),
        })?;
        Ok(EBook {
            isbn,
            title,
            description: self.description,
            authors: self.authors,
            bisacs: self.bisacs,
            editor_tags: self.editor_tags,
            search_terms: self.search_terms,
            review_keywords: self.review_keywords,
        })
    }
}

pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    Ok(ingest_with_warnings(path, format)?.0)
}

pub fn ingest_with_warnings(
    path: &Path,
    format: CorpusFormat,
) -> Result<(Corpus, Vec<IngestWarning>), CorpusError> {
    let books = match format {
        CorpusFormat::Jsonl => read_jsonl(BufReader::new(File::open(path)?))?,
        CorpusFormat::Csv => read_csv(File::open(path)?)?,
    };
    Corpus::from_books_with_warnings(books)
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<EBook>, CorpusError> {
    let mut books = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        books.push(raw.into_book(line_no)?);
    }
    Ok(books)
}

fn split_multi(cell: Option<&str>) -> Vec<String> {
    cell.map(|c| {
        c.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    })
    .unwrap_or_default()
}

pub fn read_csv(reader: impl io::Read) -> Result<Vec<EBook>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let cols: Vec<Option<usize>> = CSV_HEADER.iter().map(|n| col(n)).collect();
    let mut books = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CorpusError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: usize| cols[i].and_then(|c| rec.get(c));
        let raw = RawRecord {
            isbn: cell(0).map(String::from),
            title: cell(1).map(String::from),
            description: cell(2).unwrap_or_default().to_string(),
            authors: split_multi(cell(3)),
            bisacs: split_multi(cell(4)),
            editor_tags: split_multi(cell(5)),
            search_terms: split_multi(cell(6)),
            review_keywords: split_multi(cell(7)),
        };
        books.push(raw.into_book(line)?);
    }
    Ok(books)
}

/// Dataset statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_books: usize,
    pub n_with_editor_tags: usize,
    pub n_with_search_terms: usize,
    pub n_with_both: usize,
    pub n_authors: usize,
    pub n_bisacs: usize,
    pub n_distinct_editor_tags: usize,
    pub n_distinct_search_terms: usize,
    pub n_with_review_keywords: usize,
    pub n_distinct_review_keywords: usize,
    pub avg_review_keywords_per_book: f64,
    /// Share of search-term assignments whose tokens occur contiguously in
    /// the book's title tokens.
    pub title_overlap_fraction: f64,
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    let cfg = PreprocessConfig::default();
    let mut s = CorpusStats {
        n_books: corpus.len(),
        n_authors: corpus.author_index.len(),
        n_bisacs: corpus.bisac_index.len(),
        n_distinct_editor_tags: corpus.editor_counts.len(),
        n_distinct_search_terms: corpus.amazon_counts.len(),
        ..CorpusStats::default()
    };
    let mut review_vocab = BTreeSet::new();
    let mut review_assignments = 0usize;
    let mut term_assignments = 0usize;
    let mut in_title = 0usize;
    for book in corpus.books() {
        let has_editor = !book.editor_tags.is_empty();
        let has_terms = !book.search_terms.is_empty();
        s.n_with_editor_tags += has_editor as usize;
        s.n_with_search_terms += has_terms as usize;
        s.n_with_both += (has_editor && has_terms) as usize;
        if !book.review_keywords.is_empty() {
            s.n_with_review_keywords += 1;
            review_assignments += book.review_keywords.len();
            review_vocab.extend(book.review_keywords.iter().cloned());
        }
        if has_terms {
            let title = preprocess(&book.title, &cfg);
            for term in &book.search_terms {
                term_assignments += 1;
                if contains_run(&title, &preprocess(term, &cfg)) {
                    in_title += 1;
                }
            }
        }
    }
    s.n_distinct_review_keywords = review_vocab.len();
    if s.n_with_review_keywords > 0 {
        s.avg_review_keywords_per_book = review_assignments as f64 / s.n_with_review_keywords as f64;
    }
    if term_assignments > 0 {
        s.title_overlap_fraction = in_title as f64 / term_assignments as f64;
    }
    s
}
