//! Resume-vacancy matching: synthetic corpora, text preprocessing, TF-IDF and
//! transformer embeddings, Siamese fine-tuning, random-forest baselines,
//! evaluation and exact dense retrieval.

pub mod corpus;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod forest;
pub mod linalg;
pub mod pipeline;
pub mod retrieval;
pub mod siamese;
pub mod textprep;
pub mod tfidf;

pub use error::{Error, Result};
