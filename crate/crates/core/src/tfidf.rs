//! TF-IDF vectorizer restricted to the highest-document-frequency terms.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, raw counts as term frequency,
//! L2-normalized output. A document with no in-vocabulary term maps to the
//! zero vector.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::{DocumentEmbedding, Producer};
use crate::error::{Error, Result};
use crate::textprep::word_tokens;

/// Matches the width of BERT-base embeddings.
pub const DEFAULT_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    L2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TfidfFile {
    terms: Vec<String>,
    idf: Vec<f64>,
    normalization: Normalization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TfidfFile", into = "TfidfFile")]
pub struct TfidfModel {
    terms: Vec<String>,
    idf: Vec<f64>,
    normalization: Normalization,
    index: HashMap<String, usize>,
}

impl TryFrom<TfidfFile> for TfidfModel {
    type Error = Error;

    fn try_from(f: TfidfFile) -> Result<Self> {
        if f.terms.len() != f.idf.len() {
            return Err(Error::Format(format!(
                "{} terms but {} idf values",
                f.terms.len(),
                f.idf.len()
            )));
        }
        if f.idf.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Format("idf values must be finite and positive".into()));
        }
        let index: HashMap<String, usize> = f
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != f.terms.len() {
            return Err(Error::Format("duplicate TF-IDF terms".into()));
        }
        Ok(Self {
            terms: f.terms,
            idf: f.idf,
            normalization: f.normalization,
            index,
        })
    }
}

impl From<TfidfModel> for TfidfFile {
    fn from(m: TfidfModel) -> Self {
        Self {
            terms: m.terms,
            idf: m.idf,
            normalization: m.normalization,
        }
    }
}

impl TfidfModel {
    /// Fits on resumes and vacancies together.
    pub fn fit(train_docs: &[Document], dim: usize) -> Result<Self> {
        Self::fit_texts(train_docs.iter().map(|d| d.text.as_str()), dim)
    }

    pub fn fit_texts<'a>(texts: impl IntoIterator<Item = &'a str>, dim: usize) -> Result<Self> {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0usize;
        let mut any_token = false;
        for text in texts {
            n_docs += 1;
            let unique: HashSet<String> = word_tokens(text, true).into_iter().collect();
            any_token |= !unique.is_empty();
            for t in unique {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if !any_token {
            return Err(Error::Fit("TF-IDF corpus has no tokens".into()));
        }
        if dim == 0 {
            return Err(Error::Fit("TF-IDF dimension must be positive".into()));
        }
        let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(dim);

        let n = n_docs as f64;
        let (terms, idf): (Vec<String>, Vec<f64>) = ranked
            .into_iter()
            .map(|(t, d)| (t, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .unzip();
        Self::try_from(TfidfFile {
            terms,
            idf,
            normalization: Normalization::L2,
        })
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn transform_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for w in word_tokens(text, true) {
            if let Some(&i) = self.index.get(&w) {
                v[i] += 1.0;
            }
        }
        for (x, idf) in v.iter_mut().zip(&self.idf) {
            *x *= idf;
        }
        crate::linalg::l2_normalize(&mut v);
        v
    }

    pub fn transform(&self, doc: &Document) -> DocumentEmbedding {
        DocumentEmbedding::new(self.transform_text(&doc.text), Producer::Tfidf, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}
