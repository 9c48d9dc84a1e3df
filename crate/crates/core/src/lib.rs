//! Tag recommendation for e-book annotation.
//!
//! Popularity-based, content-similarity-based and hybrid recommenders over
//! two annotation vocabularies (editor tags and retailer search terms),
//! evaluated against held-out review keywords with nDCG, an embedding-based
//! semantic similarity and pairwise diversity.

pub mod corpus;
pub mod synth;
pub mod text;
pub mod tfidf;
pub mod embed;
pub mod fixtures;
pub mod recommend;
pub mod eval;
pub mod pipeline;
pub mod report;
