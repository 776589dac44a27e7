use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{index_documents, Document, LabelSource, LabeledPair, Role};
use crate::error::{Error, Result};
use crate::textprep::word_tokens;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pairs: usize,
    pub n_positive: usize,
    pub n_consultant_negative: usize,
    pub n_random_negative: usize,
    pub n_unique_resumes: usize,
    pub n_unique_vacancies: usize,
    /// Number of paired resumes -> number of vacancies with that many.
    pub pairs_per_vacancy_histogram: BTreeMap<usize, usize>,
    pub mean_tokens_resume: f64,
    pub mean_tokens_vacancy: f64,
}

impl CorpusStats {
    /// Fraction of vacancies paired with exactly one resume.
    pub fn single_pair_vacancy_share(&self) -> f64 {
        if self.n_unique_vacancies == 0 {
            return 0.0;
        }
        *self.pairs_per_vacancy_histogram.get(&1).unwrap_or(&0) as f64
            / self.n_unique_vacancies as f64
    }

    /// Fraction of vacancies paired with at most `k` resumes.
    pub fn vacancy_share_at_most(&self, k: usize) -> f64 {
        if self.n_unique_vacancies == 0 {
            return 0.0;
        }
        self.pairs_per_vacancy_histogram
            .range(..=k)
            .map(|(_, c)| c)
            .sum::<usize>() as f64
            / self.n_unique_vacancies as f64
    }
}

/// Counts over the pairs; token means are taken over the unique documents the
/// pairs reference, using word tokens.
pub fn compute_stats(documents: &[Document], pairs: &[LabeledPair]) -> Result<CorpusStats> {
    let by_id = index_documents(documents);
    let mut resumes: HashSet<&str> = HashSet::new();
    let mut per_vacancy: HashMap<&str, HashSet<&str>> = HashMap::new();
    let (mut pos, mut cneg, mut rneg) = (0, 0, 0);

    for p in pairs {
        let integrity = |reason: String| Error::Integrity {
            resume_id: p.resume_id.clone(),
            vacancy_id: p.vacancy_id.clone(),
            reason,
        };
        match by_id.get(p.resume_id.as_str()) {
            None => return Err(integrity(format!("dangling resume_id {:?}", p.resume_id))),
            Some(d) if d.role != Role::Resume => {
                return Err(integrity(format!("{:?} is not a resume", p.resume_id)))
            }
            _ => {}
        }
        match by_id.get(p.vacancy_id.as_str()) {
            None => return Err(integrity(format!("dangling vacancy_id {:?}", p.vacancy_id))),
            Some(d) if d.role != Role::Vacancy => {
                return Err(integrity(format!("{:?} is not a vacancy", p.vacancy_id)))
            }
            _ => {}
        }
        match p.source {
            LabelSource::ConsultantPositive => pos += 1,
            LabelSource::ConsultantNegative => cneg += 1,
            LabelSource::RandomNegative => rneg += 1,
        }
        resumes.insert(&p.resume_id);
        per_vacancy
            .entry(&p.vacancy_id)
            .or_default()
            .insert(&p.resume_id);
    }

    let mut histogram = BTreeMap::new();
    for paired in per_vacancy.values() {
        *histogram.entry(paired.len()).or_insert(0) += 1;
    }

    let mean_tokens = |ids: &mut dyn Iterator<Item = &str>| -> f64 {
        let (mut total, mut n) = (0usize, 0usize);
        for id in ids {
            total += word_tokens(&by_id[id].text, true).len();
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            total as f64 / n as f64
        }
    };
    let mut resume_ids: Vec<&str> = resumes.iter().copied().collect();
    resume_ids.sort_unstable();
    let mut vacancy_ids: Vec<&str> = per_vacancy.keys().copied().collect();
    vacancy_ids.sort_unstable();

    Ok(CorpusStats {
        n_pairs: pairs.len(),
        n_positive: pos,
        n_consultant_negative: cneg,
        n_random_negative: rneg,
        n_unique_resumes: resumes.len(),
        n_unique_vacancies: per_vacancy.len(),
        pairs_per_vacancy_histogram: histogram,
        mean_tokens_resume: mean_tokens(&mut resume_ids.into_iter()),
        mean_tokens_vacancy: mean_tokens(&mut vacancy_ids.into_iter()),
    })
}
