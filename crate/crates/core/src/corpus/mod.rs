//! Labeled resume/vacancy pair datasets: ingestion, synthetic generation,
//! random-negative sampling, splitting and summary statistics.

mod io;
mod sampling;
mod stats;
mod synthetic;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    ingest_documents, read_pairs, write_documents, write_documents_tsv, write_pairs, DocFormat,
};
pub use sampling::{add_random_negatives, split_dataset, DatasetSplit, SplitFractions};
pub use stats::{compute_stats, CorpusStats};
pub use synthetic::{
    generate_synthetic_corpus, Lexicon, SyntheticCorpus, SyntheticCorpusSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Resume,
    Vacancy,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Resume => f.write_str("resume"),
            Role::Vacancy => f.write_str("vacancy"),
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "resume" => Ok(Role::Resume),
            "vacancy" => Ok(Role::Vacancy),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// One resume or vacancy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub role: Role,
    pub language: String,
    pub text: String,
    /// Filled in after tokenization; zero until then.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub token_count: usize,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        role: Role,
        language: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            role,
            language: language.into(),
            text: text.into(),
            token_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    ConsultantPositive,
    ConsultantNegative,
    RandomNegative,
}

impl LabelSource {
    pub fn label(self) -> u8 {
        match self {
            LabelSource::ConsultantPositive => 1,
            LabelSource::ConsultantNegative | LabelSource::RandomNegative => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub resume_id: String,
    pub vacancy_id: String,
    pub label: u8,
    pub source: LabelSource,
}

impl LabeledPair {
    /// Builds a pair whose label is implied by its source.
    pub fn new(resume_id: impl Into<String>, vacancy_id: impl Into<String>, source: LabelSource) -> Self {
        Self {
            resume_id: resume_id.into(),
            vacancy_id: vacancy_id.into(),
            label: source.label(),
            source,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.resume_id, &self.vacancy_id)
    }

    pub fn is_consistent(&self) -> bool {
        self.label == self.source.label()
    }
}

/// Document lookup by id.
pub fn index_documents(documents: &[Document]) -> HashMap<&str, &Document> {
    documents.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}

/// Checks label/source consistency and `(resume_id, vacancy_id)` uniqueness.
pub fn validate_pairs(pairs: &[LabeledPair]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(pairs.len());
    for p in pairs {
        if !p.is_consistent() {
            return Err(Error::Integrity {
                resume_id: p.resume_id.clone(),
                vacancy_id: p.vacancy_id.clone(),
                reason: format!("label {} inconsistent with source {:?}", p.label, p.source),
            });
        }
        if !seen.insert(p.key()) {
            return Err(Error::Integrity {
                resume_id: p.resume_id.clone(),
                vacancy_id: p.vacancy_id.clone(),
                reason: "duplicate pair".into(),
            });
        }
    }
    Ok(())
}
