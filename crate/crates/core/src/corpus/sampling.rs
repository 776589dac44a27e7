use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, LabelSource, LabeledPair, Role};
use crate::error::{Error, Result};

/// Appends `target_count` random negatives drawn uniformly without replacement
/// from the (resume, vacancy) combinations not already present.
pub fn add_random_negatives(
    pairs: &[LabeledPair],
    documents: &[Document],
    target_count: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let mut out = pairs.to_vec();
    if target_count == 0 {
        return Ok(out);
    }
    let resumes: Vec<&str> = documents
        .iter()
        .filter(|d| d.role == Role::Resume)
        .map(|d| d.doc_id.as_str())
        .collect();
    let vacancies: Vec<&str> = documents
        .iter()
        .filter(|d| d.role == Role::Vacancy)
        .map(|d| d.doc_id.as_str())
        .collect();
    let resume_set: HashSet<&str> = resumes.iter().copied().collect();
    let vacancy_set: HashSet<&str> = vacancies.iter().copied().collect();

    let mut existing: HashSet<(&str, &str)> = pairs
        .iter()
        .map(|p| p.key())
        .filter(|(r, v)| resume_set.contains(r) && vacancy_set.contains(v))
        .collect();
    let total = resumes.len() as u128 * vacancies.len() as u128;
    let free = total - existing.len() as u128;
    if target_count as u128 > free {
        return Err(Error::Capacity {
            requested: target_count,
            available: free.min(usize::MAX as u128) as usize,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if (target_count as u128) * 2 <= free {
        // Rejection sampling: each accepted draw is uniform over the remaining free set.
        let mut drawn = 0;
        while drawn < target_count {
            let r = resumes[rng.gen_range(0..resumes.len())];
            let v = vacancies[rng.gen_range(0..vacancies.len())];
            if existing.insert((r, v)) {
                out.push(LabeledPair::new(r, v, LabelSource::RandomNegative));
                drawn += 1;
            }
        }
    } else {
        let mut complement: Vec<(&str, &str)> = vacancies
            .iter()
            .flat_map(|&v| resumes.iter().map(move |&r| (r, v)))
            .filter(|key| !existing.contains(key))
            .collect();
        let (chosen, _) = complement.partial_shuffle(&mut rng, target_count);
        out.extend(
            chosen
                .iter()
                .map(|&(r, v)| LabeledPair::new(r, v, LabelSource::RandomNegative)),
        );
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledPair>,
    pub validation: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of vacancies that occur in both the training and the test part.
    /// Non-zero in general because splitting is by pair.
    pub fn vacancies_shared_train_test(&self) -> usize {
        let train: HashSet<&str> = self.train.iter().map(|p| p.vacancy_id.as_str()).collect();
        let test: HashSet<&str> = self.test.iter().map(|p| p.vacancy_id.as_str()).collect();
        train.intersection(&test).count()
    }

    pub fn resumes_shared_train_test(&self) -> usize {
        let train: HashSet<&str> = self.train.iter().map(|p| p.resume_id.as_str()).collect();
        let test: HashSet<&str> = self.test.iter().map(|p| p.resume_id.as_str()).collect();
        train.intersection(&test).count()
    }
}

/// Seeded shuffle, then validation and test each take `round(f * N)` pairs and
/// training takes the remainder (274,407 -> 219,525 / 27,441 / 27,441).
pub fn split_dataset(
    pairs: &[LabeledPair],
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    let SplitFractions {
        train,
        validation,
        test,
    } = fractions;
    if [train, validation, test]
        .iter()
        .any(|f| !(0.0..=1.0).contains(f))
    {
        return Err(Error::Spec(format!("split fractions out of range: {fractions:?}")));
    }
    if ((train + validation + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Spec(format!(
            "split fractions sum to {}, expected 1",
            train + validation + test
        )));
    }
    let n = pairs.len();
    if n < 3 {
        return Err(Error::Spec(format!("need at least 3 pairs to split, got {n}")));
    }
    let n_val = (validation * n as f64).round() as usize;
    let n_test = (test * n as f64).round() as usize;
    let n_train = n
        .checked_sub(n_val + n_test)
        .ok_or_else(|| Error::Spec(format!("split sizes exceed {n} pairs")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<LabeledPair> {
        order[range].iter().map(|&i| pairs[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: take(0..n_train),
        validation: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_docs(n_vac: usize, n_res: usize) -> Vec<Document> {
        (0..n_vac)
            .map(|j| Document::new(format!("v{j}"), Role::Vacancy, "en", "x"))
            .chain((0..n_res).map(|i| Document::new(format!("r{i}"), Role::Resume, "en", "y")))
            .collect()
    }

    fn dummy_pairs(n: usize) -> Vec<LabeledPair> {
        (0..n)
            .map(|i| {
                let src = if i % 2 == 0 {
                    LabelSource::ConsultantPositive
                } else {
                    LabelSource::ConsultantNegative
                };
                LabeledPair::new(format!("r{i}"), format!("v{}", i % 7), src)
            })
            .collect()
    }

    #[test]
    fn zero_target_is_identity() {
        let docs = grid_docs(2, 2);
        let pairs = vec![LabeledPair::new("r0", "v0", LabelSource::ConsultantPositive)];
        assert_eq!(add_random_negatives(&pairs, &docs, 0, 1).unwrap(), pairs);
    }

    #[test]
    fn fills_exact_complement() {
        // 2 vacancies x 5 resumes = 10 combinations, 8 taken.
        let docs = grid_docs(2, 5);
        let mut pairs = Vec::new();
        for j in 0..2 {
            for i in 0..5 {
                if (j, i) == (0, 3) || (j, i) == (1, 1) {
                    continue;
                }
                pairs.push(LabeledPair::new(
                    format!("r{i}"),
                    format!("v{j}"),
                    LabelSource::ConsultantNegative,
                ));
            }
        }
        // Oracle: enumerate the complement.
        let taken: HashSet<(String, String)> = pairs
            .iter()
            .map(|p| (p.resume_id.clone(), p.vacancy_id.clone()))
            .collect();
        let mut expected: Vec<(String, String)> = (0..2)
            .flat_map(|j| (0..5).map(move |i| (format!("r{i}"), format!("v{j}"))))
            .filter(|k| !taken.contains(k))
            .collect();
        expected.sort();

        let out = add_random_negatives(&pairs, &docs, 2, 42).unwrap();
        assert_eq!(out.len(), 10);
        let mut added: Vec<(String, String)> = out[8..]
            .iter()
            .map(|p| {
                assert_eq!(p.label, 0);
                assert_eq!(p.source, LabelSource::RandomNegative);
                (p.resume_id.clone(), p.vacancy_id.clone())
            })
            .collect();
        added.sort();
        assert_eq!(added, expected);

        assert!(matches!(
            add_random_negatives(&pairs, &docs, 3, 42),
            Err(Error::Capacity {
                requested: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn split_of_ten() {
        let s = split_dataset(&dummy_pairs(10), SplitFractions::default(), 4).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn split_rejects_bad_fractions_and_tiny_input() {
        let bad = SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.2,
        };
        assert!(matches!(split_dataset(&dummy_pairs(10), bad, 0), Err(Error::Spec(_))));
        assert!(matches!(
            split_dataset(&dummy_pairs(2), SplitFractions::default(), 0),
            Err(Error::Spec(_))
        ));
    }

    proptest! {
        #[test]
        fn negatives_never_collide(n_vac in 1usize..6, n_res in 1usize..8, seed in any::<u64>(), frac in 0.0f64..1.0) {
            let docs = grid_docs(n_vac, n_res);
            let pairs: Vec<LabeledPair> = (0..n_vac)
                .flat_map(|j| (0..n_res).map(move |i| (i, j)))
                .filter(|(i, j)| (i + j) % 3 == 0)
                .map(|(i, j)| LabeledPair::new(format!("r{i}"), format!("v{j}"), LabelSource::ConsultantPositive))
                .collect();
            let free = n_vac * n_res - pairs.len();
            let target = (free as f64 * frac) as usize;
            let out = add_random_negatives(&pairs, &docs, target, seed).unwrap();
            prop_assert_eq!(out.len(), pairs.len() + target);
            let before: HashSet<_> = pairs.iter().map(|p| p.key()).collect();
            let added: HashSet<_> = out[pairs.len()..].iter().map(|p| p.key()).collect();
            prop_assert_eq!(added.len(), target);
            prop_assert!(before.is_disjoint(&added));
            prop_assert_eq!(out.clone(), add_random_negatives(&pairs, &docs, target, seed).unwrap());
        }

        #[test]
        fn split_is_disjoint_cover(n in 3usize..400, seed in any::<u64>()) {
            let pairs = dummy_pairs(n);
            let s = split_dataset(&pairs, SplitFractions::default(), seed).unwrap();
            let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
            let mut orig = pairs.clone();
            all.sort_by(|a, b| a.key().cmp(&b.key()));
            orig.sort_by(|a, b| a.key().cmp(&b.key()));
            prop_assert_eq!(all, orig);
            let r10 = (0.1 * n as f64).round() as i64;
            let r80 = (0.8 * n as f64).round() as i64;
            prop_assert!((s.validation.len() as i64 - r10).abs() <= 1);
            prop_assert!((s.test.len() as i64 - r10).abs() <= 1);
            prop_assert!((s.train.len() as i64 - r80).abs() <= 1);
            prop_assert_eq!(s, split_dataset(&pairs, SplitFractions::default(), seed).unwrap());
        }
    }
}
