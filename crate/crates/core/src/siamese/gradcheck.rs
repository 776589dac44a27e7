use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::train::accumulate_pair;
use super::{classification_loss, regression_loss, Objective, SiameseModel};
use crate::encoder::{pooled_embedding, EncoderInput};
use crate::error::{Error, Result};

const STEP: f64 = 1e-4;
/// Denominator floor: groups whose analytic and numeric gradients are both
/// below this in norm are compared in absolute terms.
const FLOOR: f64 = 1e-6;
const LIVE_COORDS: usize = 40;
const RANDOM_COORDS: usize = 8;

#[derive(Clone, Debug)]
pub struct ProbePair {
    pub resume: EncoderInput,
    pub vacancy: EncoderInput,
    pub label: u8,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    /// `(group, relative error, coordinates checked)`.
    pub groups: Vec<(String, f64, usize)>,
}

fn batch_loss(model: &SiameseModel, objective: Objective, probes: &[ProbePair]) -> Result<f64> {
    let mut total = 0.0;
    for p in probes {
        let u = pooled_embedding(&model.encoder, &p.resume)?;
        let v = pooled_embedding(&model.encoder, &p.vacancy)?;
        total += match objective {
            Objective::Regression => regression_loss(&u, &v, p.label)?,
            Objective::Classification => {
                let head = model.head.as_deref().ok_or_else(|| Error::Config("classification objective needs a head".into()))?;
                classification_loss(&u, &v, p.label, head)?
            }
        };
    }
    Ok(total / probes.len() as f64)
}

fn coord(model: &mut SiameseModel, head: bool, i: usize) -> &mut f64 {
    if head {
        &mut model.head.as_mut().expect("head present")[i]
    } else {
        &mut model.encoder.params_mut()[i]
    }
}

fn central_difference(
    model: &mut SiameseModel,
    objective: Objective,
    probes: &[ProbePair],
    head: bool,
    i: usize,
) -> Result<f64> {
    let orig = *coord(model, head, i);
    *coord(model, head, i) = orig + STEP;
    let up = batch_loss(model, objective, probes);
    *coord(model, head, i) = orig - STEP;
    let down = batch_loss(model, objective, probes);
    *coord(model, head, i) = orig;
    Ok((up? - down?) / (2.0 * STEP))
}

/// Compares analytic gradients of the mean probe loss with central finite
/// differences, group by group. Each group is scored by
/// `|a - n| / max(sqrt(|a|^2 + |n|^2), floor)` over its checked coordinates:
/// up to 40 coordinates with nonzero analytic gradient plus 8 drawn at random.
pub fn gradient_check(
    model: &SiameseModel,
    objective: Objective,
    probes: &[ProbePair],
    seed: u64,
) -> Result<GradientCheckReport> {
    let mut model = model.clone();
    let n_enc = model.encoder.params().len();
    let n_head = model.head.as_ref().map_or(0, Vec::len);
    let mut enc_grads = vec![0.0; n_enc];
    let mut head_grads = vec![0.0; n_head];
    let w = 1.0 / probes.len() as f64;
    for p in probes {
        accumulate_pair(
            &model,
            objective,
            &p.resume,
            &p.vacancy,
            p.label,
            w,
            &mut enc_grads,
            Some(&mut head_grads),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<(String, std::ops::Range<usize>, bool)> = model
        .encoder
        .layout()
        .groups()
        .into_iter()
        .map(|(n, r)| (n, r, false))
        .collect();
    if objective == Objective::Classification && n_head > 0 {
        groups.push(("head".into(), 0..n_head, true));
    }

    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        groups: Vec::new(),
    };
    for (name, range, is_head) in groups {
        let analytic = if is_head { &head_grads } else { &enc_grads };
        let live: Vec<usize> = range.clone().filter(|&i| analytic[i] != 0.0).collect();
        let stride = (live.len() / LIVE_COORDS).max(1);
        let mut coords: Vec<usize> = live.into_iter().step_by(stride).take(LIVE_COORDS).collect();
        let n_random = RANDOM_COORDS.min(range.len());
        coords.extend(sample(&mut rng, range.len(), n_random).into_iter().map(|k| range.start + k));
        coords.sort_unstable();
        coords.dedup();

        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for &i in &coords {
            let a = analytic[i];
            let n = central_difference(&mut model, objective, probes, is_head, i)?;
            diff += (a - n).powi(2);
            scale += a * a + n * n;
        }
        let rel = diff.sqrt() / scale.sqrt().max(FLOOR);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.groups.push((name, rel, coords.len()));
    }
    Ok(report)
}
