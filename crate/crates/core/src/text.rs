//! Text preprocessing shared by the TF-IDF index, the embedding trainer and
//! tag normalization.
//!
//! Input is split on whitespace; inside each chunk every character that is
//! not alphanumeric or a hyphen is removed, leading and trailing hyphens are
//! trimmed, and the result is lowercased. Stopwords and (optionally) short
//! tokens are then dropped.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

/// Built-in English and German stopwords.
const DEFAULT_STOPWORDS: &[&str] = &[
    // english
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he",
    "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "me", "more", "my", "no",
    "not", "of", "on", "one", "only", "or", "other", "our", "out", "over", "she", "so", "some",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "to", "up", "us", "was", "we", "were", "what", "when", "which", "who", "will", "with",
    "would", "you", "your",
    // german
    "aber", "als", "am", "an", "auch", "auf", "aus", "bei", "bin", "bis", "da", "das", "dass",
    "dem", "den", "der", "des", "die", "doch", "du", "durch", "ein", "eine", "einem", "einen",
    "einer", "eines", "er", "es", "für", "hat", "hatte", "ich", "ihr", "ihre", "im", "in", "ist",
    "ja", "kann", "mit", "nach", "nicht", "noch", "nur", "ob", "oder", "sein", "seine", "sich",
    "sie", "sind", "so", "über", "um", "und", "uns", "unter", "vom", "von", "vor", "war", "was",
    "weil", "wenn", "wie", "wir", "wird", "zu", "zum", "zur",
];

/// Ordered list of cleaned, lowercase tokens.
pub type TokenStream = Vec<String>;

/// Options for [`preprocess`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub stopwords: BTreeSet<String>,
    /// Tokens with fewer characters are dropped. `1` disables the filter.
    pub min_word_length: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stopwords: default_stopwords(),
            min_word_length: 1,
        }
    }
}

impl PreprocessConfig {
    pub fn with_min_word_length(mut self, min_word_length: usize) -> Self {
        self.min_word_length = min_word_length;
        self
    }

    /// No stopwords, no length filter.
    pub fn bare() -> Self {
        PreprocessConfig {
            stopwords: BTreeSet::new(),
            min_word_length: 1,
        }
    }
}

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|w| w.to_string()).collect()
}

/// Reads a stopword file: one word per line, blank lines ignored.
pub fn load_stopwords(path: &Path) -> io::Result<BTreeSet<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .flat_map(clean_chunk)
        .filter(|w| !w.is_empty())
        .collect())
}

fn clean_chunk(chunk: &str) -> Option<String> {
    let kept: String = chunk
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || *c == '-')
        .collect();
    let trimmed = kept.trim_matches('-');
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_string())
    }
}

pub fn preprocess(text: &str, config: &PreprocessConfig) -> TokenStream {
    text.split_whitespace()
        .filter_map(clean_chunk)
        .filter(|t| !config.stopwords.contains(t))
        .filter(|t| t.chars().count() >= config.min_word_length.max(1))
        .collect()
}

/// Canonical form of a tag used for every exact-match comparison.
///
/// Returns an empty string when nothing survives cleaning; callers drop
/// such tags.
pub fn normalize_tag(tag: &str) -> String {
    let parts: Vec<String> = tag.split_whitespace().filter_map(clean_chunk).collect();
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(stop: &[&str], min_len: usize) -> PreprocessConfig {
        PreprocessConfig {
            stopwords: stop.iter().map(|s| s.to_string()).collect(),
            min_word_length: min_len,
        }
    }

    #[test]
    fn lowercases_and_strips_punctuation() {
        let out = preprocess("The Long, long Night!", &cfg(&["the"], 1));
        assert_eq!(out, vec!["long", "long", "night"]);
    }

    #[test]
    fn min_length_filter() {
        assert_eq!(preprocess("a bb ccccc", &cfg(&[], 5)), vec!["ccccc"]);
    }

    #[test]
    fn empty_input() {
        assert!(preprocess("", &PreprocessConfig::default()).is_empty());
        assert!(preprocess("  \t ", &PreprocessConfig::default()).is_empty());
    }

    #[test]
    fn hyphen_kept_inside_words_only() {
        let out = preprocess("-well-known- -- x-ray", &cfg(&[], 1));
        assert_eq!(out, vec!["well-known", "x-ray"]);
    }

    #[test]
    fn umlauts_survive() {
        let out = preprocess("Über MÄRCHEN", &cfg(&[], 1));
        assert_eq!(out, vec!["über", "märchen"]);
    }

    #[test]
    fn normalize_tag_examples() {
        assert_eq!(normalize_tag("  Crime  Novel "), "crime novel");
        assert_eq!(normalize_tag("Victim"), "victim");
        assert_eq!(normalize_tag("!!"), "");
    }

    #[test]
    fn default_list_has_both_languages() {
        let sw = default_stopwords();
        assert!(sw.contains("the"));
        assert!(sw.contains("und"));
    }

    #[test]
    fn stopword_file_is_cleaned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stop.txt");
        fs::write(&path, "Foo\n\n bar \n!!\n").unwrap();
        let sw = load_stopwords(&path).unwrap();
        assert_eq!(sw.into_iter().collect::<Vec<_>>(), vec!["bar", "foo"]);
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(text in "[a-zA-Z0-9äö ,.!?'-]{0,60}", min_len in 1usize..6) {
            let c = cfg(&["the", "and"], min_len);
            let once = preprocess(&text, &c);
            let twice = preprocess(&once.join(" "), &c);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn never_more_tokens_than_whitespace_chunks(text in "\\PC{0,80}") {
            let out = preprocess(&text, &PreprocessConfig::default());
            prop_assert!(out.len() <= text.split_whitespace().count());
            for tok in &out {
                prop_assert!(tok.chars().all(|c| c.is_alphanumeric() || c == '-'));
                prop_assert!(!default_stopwords().contains(tok));
            }
        }

        #[test]
        fn normalize_tag_is_idempotent(tag in "\\PC{0,40}") {
            let once = normalize_tag(&tag);
            prop_assert_eq!(normalize_tag(&once), once);
        }
    }
}
