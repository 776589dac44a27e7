use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, Sgd};
use super::{classification_loss_grad, regression_loss_grad, Objective, OptimizerKind, SiameseModel, TrainingConfig};
use crate::corpus::{index_documents, DatasetSplit, Document, LabeledPair};
use crate::encoder::{pooled_backward, pooled_forward, prepare_input, EncoderInput};
use crate::error::{Error, Result};
use crate::evalkit::roc_auc_scores;
use crate::linalg::cosine_similarity;
use crate::textprep::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean per-pair loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
    pub n_train_pairs: usize,
    /// Cosine ROC-AUC on the validation pairs, when both labels occur there.
    pub validation_roc_auc: Option<f64>,
    /// The only non-deterministic field.
    pub wall_time_secs: f64,
    pub config: TrainingConfig,
}

/// Adds the gradient of `weight * loss(pair)` into the buffers and returns the
/// unweighted loss.
pub(crate) fn accumulate_pair(
    model: &SiameseModel,
    objective: Objective,
    resume: &EncoderInput,
    vacancy: &EncoderInput,
    label: u8,
    weight: f64,
    enc_grads: &mut [f64],
    head_grads: Option<&mut [f64]>,
) -> Result<f64> {
    let fu = pooled_forward(&model.encoder, resume)?;
    let fv = pooled_forward(&model.encoder, vacancy)?;
    let (loss, du, dv) = match objective {
        Objective::Regression => regression_loss_grad(&fu.embedding, &fv.embedding, label)?,
        Objective::Classification => {
            let head = model
                .head
                .as_deref()
                .ok_or_else(|| Error::Config("classification objective needs a head".into()))?;
            let (loss, du, dv, dh) = classification_loss_grad(&fu.embedding, &fv.embedding, label, head)?;
            if let Some(hg) = head_grads {
                hg.iter_mut().zip(&dh).for_each(|(a, b)| *a += weight * b);
            }
            (loss, du, dv)
        }
    };
    let du: Vec<f64> = du.iter().map(|g| g * weight).collect();
    let dv: Vec<f64> = dv.iter().map(|g| g * weight).collect();
    pooled_backward(&model.encoder, &fu, &du, enc_grads)?;
    pooled_backward(&model.encoder, &fv, &dv, enc_grads)?;
    Ok(loss)
}

enum Opt {
    Sgd(Sgd, Sgd),
    Adam(Adam, Adam),
}

impl Opt {
    fn step(&mut self, model: &mut SiameseModel, enc_grads: &[f64], head_grads: &[f64]) {
        match self {
            Opt::Sgd(e, h) => {
                e.step(model.encoder.params_mut(), enc_grads);
                if let Some(head) = model.head.as_mut() {
                    h.step(head, head_grads);
                }
            }
            Opt::Adam(e, h) => {
                e.step(model.encoder.params_mut(), enc_grads);
                if let Some(head) = model.head.as_mut() {
                    h.step(head, head_grads);
                }
            }
        }
    }
}

fn prepare_all<'a>(
    pairs: impl IntoIterator<Item = &'a LabeledPair>,
    docs: &HashMap<&str, &Document>,
    vocab: &Vocabulary,
    config: &TrainingConfig,
    cache: &mut HashMap<String, EncoderInput>,
) -> Result<()> {
    for p in pairs {
        for id in [&p.resume_id, &p.vacancy_id] {
            if cache.contains_key(id.as_str()) {
                continue;
            }
            let doc = docs.get(id.as_str()).ok_or_else(|| Error::Integrity {
                resume_id: p.resume_id.clone(),
                vacancy_id: p.vacancy_id.clone(),
                reason: format!("references unknown document {id:?}"),
            })?;
            let input = prepare_input(&doc.text, vocab, config.pooling).map_err(|e| match e {
                Error::EmptyInput(m) => Error::EmptyInput(format!("{id}: {m}")),
                other => other,
            })?;
            cache.insert(id.clone(), input);
        }
    }
    Ok(())
}

/// Mini-batch fine-tuning over shuffled training pairs. Under the
/// classification objective the head is trained jointly and then dropped, so
/// the returned model is encoder-only either way.
pub fn train(
    split: &DatasetSplit,
    documents: &[Document],
    vocab: &Vocabulary,
    mut model: SiameseModel,
    config: &TrainingConfig,
) -> Result<(SiameseModel, TrainingReport)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    match (config.objective, model.head.is_some()) {
        (Objective::Classification, false) => {
            return Err(Error::Config("classification objective needs a head".into()))
        }
        (Objective::Regression, true) => {
            return Err(Error::Config("regression objective takes no head".into()))
        }
        _ => {}
    }
    let started = Instant::now();
    let docs = index_documents(documents);
    let mut inputs = HashMap::new();
    prepare_all(split.train.iter().chain(&split.validation), &docs, vocab, config, &mut inputs)?;

    let n_enc = model.encoder.params().len();
    let n_head = model.head.as_ref().map_or(0, Vec::len);
    let mut opt = match config.optimizer {
        OptimizerKind::Sgd => Opt::Sgd(
            Sgd { learning_rate: config.learning_rate },
            Sgd { learning_rate: config.learning_rate },
        ),
        OptimizerKind::Adam => Opt::Adam(Adam::new(n_enc, config.learning_rate), Adam::new(n_head, config.learning_rate)),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut enc_grads = vec![0.0; n_enc];
    let mut head_grads = vec![0.0; n_head];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            enc_grads.fill(0.0);
            head_grads.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &split.train[i];
                batch_loss += accumulate_pair(
                    &model,
                    config.objective,
                    &inputs[&p.resume_id],
                    &inputs[&p.vacancy_id],
                    p.label,
                    weight,
                    &mut enc_grads,
                    Some(&mut head_grads),
                )?;
            }
            if !batch_loss.is_finite() || enc_grads.iter().chain(&head_grads).any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            total += batch_loss;
            opt.step(&mut model, &enc_grads, &head_grads);
            steps += 1;
        }
        epoch_losses.push(total / split.train.len() as f64);
    }

    if !model.encoder.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            batch: split.train.len().div_ceil(config.batch_size),
        });
    }
    model.head = None;
    model.encoder.set_fine_tuned(true);

    let validation_roc_auc = validation_auc(&model, &split.validation, &inputs)?;
    let report = TrainingReport {
        epoch_losses,
        optimizer_steps: steps,
        n_train_pairs: split.train.len(),
        validation_roc_auc,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok((model, report))
}

fn validation_auc(
    model: &SiameseModel,
    pairs: &[LabeledPair],
    inputs: &HashMap<String, EncoderInput>,
) -> Result<Option<f64>> {
    let has_both = pairs.iter().any(|p| p.label == 1) && pairs.iter().any(|p| p.label == 0);
    if !has_both {
        return Ok(None);
    }
    let mut embedded: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        for id in [&p.resume_id, &p.vacancy_id] {
            if !embedded.contains_key(id.as_str()) {
                embedded.insert(id, crate::encoder::pooled_embedding(&model.encoder, &inputs[id])?);
            }
        }
        scores.push(cosine_similarity(&embedded[p.resume_id.as_str()], &embedded[p.vacancy_id.as_str()])?);
    }
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    roc_auc_scores(&scores, &labels).map(Some)
}
