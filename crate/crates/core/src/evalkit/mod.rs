//! Metrics, significance tests, plot-data exports and the run matrix.

mod export;
mod matrix;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use export::{density_export, heatmap_export, DensityExport, Heatmap};
pub use matrix::{
    render_table_csv, render_table_text, run_experiment_matrix, Head, MatrixOutcome, Representation,
    RunFailure, RunSpec, TrainingSummary,
};
pub use stats::{
    bootstrap_auc_samples, bootstrap_indices, correctness_indicators, t_test_independent, SignificanceResult,
    SignificanceUnit, ALPHA,
};

/// Decision threshold for probability scores.
pub const PROBABILITY_THRESHOLD: f64 = 0.5;
/// Decision threshold for cosine scores.
pub const COSINE_THRESHOLD: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub resume_id: String,
    pub vacancy_id: String,
    pub score: f64,
    pub label: u8,
    pub run_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub roc_auc: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub threshold: f64,
    pub n_samples: usize,
}

fn split_scored(scored: &[ScoredPair]) -> (Vec<f64>, Vec<u8>) {
    scored.iter().map(|s| (s.score, s.label)).unzip()
}

/// Mann-Whitney form of ROC-AUC: the share of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half.
pub fn roc_auc(scored: &[ScoredPair]) -> Result<f64> {
    let (s, l) = split_scored(scored);
    roc_auc_scores(&s, &l)
}

pub fn roc_auc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the U statistic, kept integral so ties stay exact.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Macro-averaged precision, recall and F1 with `score > threshold`
/// predicting class 1. Undefined ratios count as 0.
pub fn macro_prf(scored: &[ScoredPair], threshold: f64) -> Result<(f64, f64, f64)> {
    let (s, l) = split_scored(scored);
    macro_prf_scores(&s, &l, threshold)
}

pub fn macro_prf_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, f64, f64)> {
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    // confusion[actual][predicted]
    let mut confusion = [[0u64; 2]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        confusion[l as usize][(s > threshold) as usize] += 1;
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for c in 0..2 {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        let pc = ratio(tp, predicted);
        let rc = ratio(tp, actual);
        let fc = if pc + rc == 0.0 { 0.0 } else { 2.0 * pc * rc / (pc + rc) };
        p += pc / 2.0;
        r += rc / 2.0;
        f += fc / 2.0;
    }
    Ok((p, r, f))
}

pub fn evaluate(run_id: &str, scored: &[ScoredPair], threshold: f64) -> Result<EvalReport> {
    let roc_auc = roc_auc(scored)?;
    let (precision_macro, recall_macro, f1_macro) = macro_prf(scored, threshold)?;
    Ok(EvalReport {
        run_id: run_id.to_string(),
        roc_auc,
        precision_macro,
        recall_macro,
        f1_macro,
        threshold,
        n_samples: scored.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc_scores(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(roc_auc_scores(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc_scores(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(roc_auc_scores(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn prf_examples() {
        assert_eq!(macro_prf_scores(&[0.9, 0.1, 0.7], &[1, 0, 1], 0.5).unwrap(), (1.0, 1.0, 1.0));
        // TP = FP = FN = TN = 1.
        assert_eq!(macro_prf_scores(&[0.9, 0.8, 0.1, 0.2], &[1, 0, 1, 0], 0.5).unwrap(), (0.5, 0.5, 0.5));
        let (p, r, f) = macro_prf_scores(&[0.9; 4], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((p, r), (0.25, 0.5));
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
        // Strict threshold: a cosine of exactly 0 predicts class 0.
        assert_eq!(macro_prf_scores(&[0.0, 0.5], &[0, 1], COSINE_THRESHOLD).unwrap(), (1.0, 1.0, 1.0));
        assert!(macro_prf_scores(&[], &[], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_count(
            data in proptest::collection::vec((0u8..20, 0u8..2), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 4.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            let has_both = labels.contains(&0) && labels.contains(&1);
            prop_assume!(has_both);
            prop_assert_eq!(roc_auc_scores(&scores, &labels).unwrap(), brute_force(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            data in proptest::collection::vec((-5.0f64..5.0, 0u8..2), 2..100),
            a in 0.1f64..10.0,
            b in -3.0f64..3.0,
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let base = roc_auc_scores(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            prop_assert_eq!(roc_auc_scores(&mapped, &labels).unwrap(), base);
            prop_assert_eq!(roc_auc_scores(&cubed, &labels).unwrap(), base);
        }

        #[test]
        fn auc_of_negated_scores_complements(
            data in proptest::collection::vec((0u32..1_000_000, 0u8..2), 2..100),
        ) {
            let mut seen = std::collections::HashSet::new();
            prop_assume!(data.iter().all(|d| seen.insert(d.0)));
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = roc_auc_scores(&scores, &labels).unwrap() + roc_auc_scores(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
