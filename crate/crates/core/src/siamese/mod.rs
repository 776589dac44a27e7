//! Siamese bi-encoder: one shared encoder for both towers, fine-tuned under a
//! cosine-regression or a softmax-classification objective.

mod gradcheck;
mod optim;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::PoolingStrategy;
use crate::encoder::{embed_text, EncoderState};
use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, dot, norm};
use crate::textprep::Vocabulary;

pub use gradcheck::{gradient_check, GradientCheckReport, ProbePair};
pub use optim::{Adam, Sgd};
pub use train::{train, TrainingReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Classification,
    Regression,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "classification" => Ok(Self::Classification),
            "regression" => Ok(Self::Regression),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Classification => "classification",
            Self::Regression => "regression",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub pooling: PoolingStrategy,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl TrainingConfig {
    pub fn new(objective: Objective, seed: u64) -> Self {
        Self {
            objective,
            epochs: 5,
            batch_size: 4,
            learning_rate: 2e-4,
            pooling: PoolingStrategy::MeanTokens,
            seed,
            optimizer: OptimizerKind::Adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Shared encoder plus, under the classification objective, a `2 x 3d`
/// softmax head (row-major, no bias).
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel {
    pub encoder: EncoderState,
    pub head: Option<Vec<f64>>,
}

impl SiameseModel {
    pub fn new(encoder: EncoderState, objective: Objective, seed: u64) -> Self {
        let head = match objective {
            Objective::Regression => None,
            Objective::Classification => {
                let d3 = 3 * encoder.config().embed_dim;
                let dist = Normal::new(0.0, 1.0 / (d3 as f64).sqrt()).expect("positive std");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Some((0..2 * d3).map(|_| dist.sample(&mut rng)).collect())
            }
        };
        Self { encoder, head }
    }

    pub fn embed(&self, text: &str, pooling: PoolingStrategy, vocab: &Vocabulary) -> Result<Vec<f64>> {
        embed_text(&self.encoder, text, pooling, vocab)
    }

    pub fn to_json(&self, training: Option<&TrainingConfig>) -> Result<String> {
        let ck = ModelCheckpoint {
            format: MODEL_FORMAT.into(),
            encoder: serde_json::from_str(&self.encoder.to_json()?)?,
            head: self.head.clone(),
            training: training.cloned(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(raw: &str) -> Result<(Self, Option<TrainingConfig>)> {
        let ck: ModelCheckpoint = serde_json::from_str(raw)?;
        if ck.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown model format {:?}", ck.format)));
        }
        let encoder = EncoderState::from_json(&ck.encoder.to_string())?;
        if let Some(h) = &ck.head {
            if h.len() != 6 * encoder.config().embed_dim {
                return Err(Error::Format("classification head has wrong size".into()));
            }
        }
        Ok((Self { encoder, head: ck.head }, ck.training))
    }

    pub fn save(&self, path: &Path, training: Option<&TrainingConfig>) -> Result<()> {
        std::fs::write(path, self.to_json(training)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainingConfig>)> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }
}

const MODEL_FORMAT: &str = "jobmatch-siamese/1";

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format: String,
    encoder: serde_json::Value,
    head: Option<Vec<f64>>,
    training: Option<TrainingConfig>,
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "embeddings of dimension {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// `(cos(u, v) - label)^2`.
pub fn regression_loss(u: &[f64], v: &[f64], label: u8) -> Result<f64> {
    let c = cosine_similarity(u, v)?;
    Ok((c - label as f64).powi(2))
}

/// Loss plus gradients with respect to `u` and `v`.
pub(crate) fn regression_loss_grad(u: &[f64], v: &[f64], label: u8) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dims(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        let y = label as f64;
        return Ok((y * y, vec![0.0; u.len()], vec![0.0; v.len()]));
    }
    let c = dot(u, v) / (nu * nv);
    let dc = 2.0 * (c - label as f64);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| dc * (b / (nu * nv) - c * a / (nu * nu)))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| dc * (a / (nu * nv) - c * b / (nv * nv)))
        .collect();
    Ok(((c - label as f64).powi(2), du, dv))
}

fn pair_features(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(3 * u.len());
    f.extend_from_slice(u);
    f.extend_from_slice(v);
    f.extend(u.iter().zip(v).map(|(a, b)| (a - b).abs()));
    f
}

fn check_head(u: &[f64], head: &[f64]) -> Result<()> {
    if head.len() != 6 * u.len() {
        return Err(Error::Shape(format!(
            "head of {} weights does not fit 2 x {}",
            head.len(),
            3 * u.len()
        )));
    }
    Ok(())
}

/// Cross-entropy of `softmax(head . [u, v, |u - v|])` against `label`.
pub fn classification_loss(u: &[f64], v: &[f64], label: u8, head: &[f64]) -> Result<f64> {
    classification_loss_grad(u, v, label, head).map(|(l, ..)| l)
}

/// Loss, gradients for `u`, `v` and the head.
pub(crate) fn classification_loss_grad(
    u: &[f64],
    v: &[f64],
    label: u8,
    head: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_dims(u, v)?;
    check_head(u, head)?;
    if label > 1 {
        return Err(Error::Shape(format!("label {label} is not binary")));
    }
    let d = u.len();
    let f = pair_features(u, v);
    let logits = [dot(&head[..3 * d], &f), dot(&head[3 * d..], &f)];
    let (loss, probs) = softmax_xent(logits, label as usize);
    let mut dz = probs;
    dz[label as usize] -= 1.0;

    let mut dhead = vec![0.0; 6 * d];
    let mut df = vec![0.0; 3 * d];
    for k in 0..2 {
        for j in 0..3 * d {
            dhead[k * 3 * d + j] = dz[k] * f[j];
            df[j] += dz[k] * head[k * 3 * d + j];
        }
    }
    let mut du = df[..d].to_vec();
    let mut dv = df[d..2 * d].to_vec();
    for j in 0..d {
        let s = sign(u[j] - v[j]);
        du[j] += df[2 * d + j] * s;
        dv[j] -= df[2 * d + j] * s;
    }
    Ok((loss, du, dv, dhead))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cross-entropy for two logits via log-sum-exp, with the softmax.
pub(crate) fn softmax_xent(logits: [f64; 2], label: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    let loss = s.ln() + m - logits[label];
    (loss, [e[0] / s, e[1] / s])
}

/// Cosine between the two tower embeddings.
pub fn score_pair(
    model: &SiameseModel,
    resume: &Document,
    vacancy: &Document,
    pooling: PoolingStrategy,
    vocab: &Vocabulary,
) -> Result<f64> {
    let named = |doc: &Document| {
        model.embed(&doc.text, pooling, vocab).map_err(|e| match e {
            Error::EmptyInput(m) => Error::EmptyInput(format!("{}: {m}", doc.doc_id)),
            other => other,
        })
    };
    cosine_similarity(&named(resume)?, &named(vacancy)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_loss_cases() {
        assert!(regression_loss(&[1.0, 2.0], &[2.0, 4.0], 1).unwrap() < 1e-24);
        assert_eq!(regression_loss(&[1.0, 0.0], &[0.0, 1.0], 1).unwrap(), 1.0);
        // cos 0.5 with label 1, cos 0 with label 0.
        let a = regression_loss(&[1.0, 0.0], &[0.5, 0.75f64.sqrt()], 1).unwrap();
        let b = regression_loss(&[1.0, 0.0], &[0.0, 3.0], 0).unwrap();
        assert!(((a + b) / 2.0 - 0.125).abs() < 1e-12);
        assert!(matches!(regression_loss(&[1.0], &[1.0, 0.0], 0), Err(Error::Shape(_))));
        assert_eq!(regression_loss(&[1.0, 0.0], &[-1.0, 0.0], 1).unwrap(), 4.0);
    }

    #[test]
    fn classification_loss_cases() {
        let u = [0.3, -1.0];
        let v = [2.0, 0.5];
        let zero = vec![0.0; 12];
        let l = classification_loss(&u, &v, 1, &zero).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.693147).abs() < 1e-6);

        assert!(softmax_xent([10.0, -10.0], 0).0 < 3e-9);
        assert!((softmax_xent([1.0, 2.0], 1).0 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((softmax_xent([1.0, 2.0], 1).0 - 0.313262).abs() < 1e-6);

        // A head that reads only the first feature yields logits (u0, 0).
        let mut head = vec![0.0; 12];
        head[0] = 1.0;
        let l = classification_loss(&[1.0, 0.0], &[0.0, 0.0], 0, &head).unwrap();
        assert!((l - softmax_xent([1.0, 0.0], 0).0).abs() < 1e-15);

        assert!(matches!(classification_loss(&u, &v, 0, &[0.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let u = vec![0.4, -1.2, 0.9];
        let v = vec![1.1, 0.3, -0.5];
        let head: Vec<f64> = (0..18).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        let eps = 1e-6;
        for label in [0u8, 1] {
            let (_, du, dv) = regression_loss_grad(&u, &v, label).unwrap();
            let (_, cu, cv, ch) = classification_loss_grad(&u, &v, label, &head).unwrap();
            for j in 0..3 {
                let mut up = u.clone();
                up[j] += eps;
                let mut dn = u.clone();
                dn[j] -= eps;
                let num = (regression_loss(&up, &v, label).unwrap() - regression_loss(&dn, &v, label).unwrap()) / (2.0 * eps);
                assert!((num - du[j]).abs() < 1e-7);
                let num = (classification_loss(&up, &v, label, &head).unwrap()
                    - classification_loss(&dn, &v, label, &head).unwrap())
                    / (2.0 * eps);
                assert!((num - cu[j]).abs() < 1e-7);

                let mut vp = v.clone();
                vp[j] += eps;
                let mut vn = v.clone();
                vn[j] -= eps;
                let num = (regression_loss(&u, &vp, label).unwrap() - regression_loss(&u, &vn, label).unwrap()) / (2.0 * eps);
                assert!((num - dv[j]).abs() < 1e-7);
                let num = (classification_loss(&u, &vp, label, &head).unwrap()
                    - classification_loss(&u, &vn, label, &head).unwrap())
                    / (2.0 * eps);
                assert!((num - cv[j]).abs() < 1e-7);
            }
            for j in 0..18 {
                let mut hp = head.clone();
                hp[j] += eps;
                let mut hn = head.clone();
                hn[j] -= eps;
                let num = (classification_loss(&u, &v, label, &hp).unwrap()
                    - classification_loss(&u, &v, label, &hn).unwrap())
                    / (2.0 * eps);
                assert!((num - ch[j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::new(Objective::Regression, 0);
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.learning_rate = 1e-3;
        c.batch_size = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert_eq!("regression".parse::<Objective>(), Ok(Objective::Regression));
        assert!("ranking".parse::<Objective>().is_err());
    }
}
