use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::roc_auc_scores;
use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceUnit {
    /// Per-example 0/1 indicators of a correct thresholded prediction.
    CorrectnessIndicators,
    /// ROC-AUC over bootstrap resamples of the test pairs.
    BootstrapAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub run_a: String,
    pub run_b: String,
    pub unit: SignificanceUnit,
    pub t_statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided Student's t-test with pooled variance. The p-value is
/// `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateTest(format!(
            "samples of size {} and {}; need at least 2 each",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    if !(pooled > 0.0) || !pooled.is_finite() {
        return Err(Error::DegenerateTest("pooled variance is zero".into()));
    }
    let t = (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Ok((t, p))
}

impl SignificanceResult {
    pub fn compute(run_a: &str, run_b: &str, unit: SignificanceUnit, a: &[f64], b: &[f64]) -> Result<Self> {
        let (t, p) = t_test_independent(a, b)?;
        Ok(Self {
            run_a: run_a.into(),
            run_b: run_b.into(),
            unit,
            t_statistic: t,
            p_value: p,
            alpha: ALPHA,
            significant: p < ALPHA,
        })
    }
}

pub fn correctness_indicators(scores: &[f64], labels: &[u8], threshold: f64) -> Vec<f64> {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| ((s > threshold) == (l == 1)) as u8 as f64)
        .collect()
}

/// Resampled test-set indices shared by every run, so each run's bootstrap
/// distribution is computed over the same draws. Draws lacking either class
/// are redrawn.
pub fn bootstrap_indices(labels: &[u8], resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = labels.len();
    let both = labels.contains(&0) && labels.contains(&1);
    if n == 0 || !both {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(resamples);
    while out.len() < resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        if pos > 0 && pos < n {
            out.push(idx);
        }
    }
    out
}

pub fn bootstrap_auc_samples(scores: &[f64], labels: &[u8], draws: &[Vec<usize>]) -> Result<Vec<f64>> {
    draws
        .iter()
        .map(|idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            roc_auc_scores(&s, &l)
        })
        .collect()
}
