use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_auc_samples, bootstrap_indices, correctness_indicators, SignificanceUnit};
use super::{evaluate, EvalReport, ScoredPair, SignificanceResult, COSINE_THRESHOLD, PROBABILITY_THRESHOLD};
use crate::corpus::{index_documents, DatasetSplit, Document, LabeledPair};
use crate::encoder::{pooled_embedding, prepare_input, EncoderState};
use crate::error::{Error, Result};
use crate::forest::{build_features_with, fit_forest, PairFeatures};
use crate::linalg::cosine_similarity;
use crate::pipeline::ExperimentConfig;
use crate::siamese::{train, Objective, SiameseModel};
use crate::textprep::Vocabulary;
use crate::tfidf::TfidfModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Tfidf,
    EncoderFrozen,
    EncoderFinetunedClassifier,
    EncoderFinetunedRegressor,
}

impl Representation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tfidf => "tfidf",
            Self::EncoderFrozen => "encoder_frozen",
            Self::EncoderFinetunedClassifier => "encoder_finetuned_classifier",
            Self::EncoderFinetunedRegressor => "encoder_finetuned_regressor",
        }
    }

    fn objective(self) -> Option<Objective> {
        match self {
            Self::EncoderFinetunedClassifier => Some(Objective::Classification),
            Self::EncoderFinetunedRegressor => Some(Objective::Regression),
            _ => None,
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        [
            Self::Tfidf,
            Self::EncoderFrozen,
            Self::EncoderFinetunedClassifier,
            Self::EncoderFinetunedRegressor,
        ]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| format!("unknown representation {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Cosine,
    Forest,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Forest => "forest",
        }
    }

    pub fn threshold(self) -> f64 {
        match self {
            Self::Cosine => COSINE_THRESHOLD,
            Self::Forest => PROBABILITY_THRESHOLD,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunSpec {
    pub representation: Representation,
    pub head: Head,
}

impl RunSpec {
    pub fn new(representation: Representation, head: Head) -> Self {
        Self { representation, head }
    }

    pub fn run_id(&self) -> String {
        format!("{}+{}", self.representation.name(), self.head.name())
    }
}

impl std::str::FromStr for RunSpec {
    type Err = String;

    /// `representation+head`, e.g. `tfidf+cosine`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (r, h) = s.split_once('+').ok_or_else(|| format!("run {s:?} is not representation+head"))?;
        let head = match h {
            "cosine" => Head::Cosine,
            "forest" => Head::Forest,
            other => return Err(format!("unknown head {other:?}")),
        };
        Ok(Self::new(r.parse()?, head))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: String,
    pub error: String,
    pub message: String,
}

/// Deterministic part of a training report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub objective: Objective,
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
    pub validation_roc_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub reports: Vec<EvalReport>,
    pub significance: Vec<SignificanceResult>,
    pub failures: Vec<RunFailure>,
    pub training: Vec<TrainingSummary>,
    pub notes: Vec<String>,
    pub n_test_pairs: usize,
    /// Test-pair scores per successful run, aligned with `reports`.
    #[serde(skip)]
    pub scored: Vec<Vec<ScoredPair>>,
}

impl MatrixOutcome {
    pub fn report(&self, spec: RunSpec) -> Option<&EvalReport> {
        let id = spec.run_id();
        self.reports.iter().find(|r| r.run_id == id)
    }
}

type Embeddings = HashMap<String, Vec<f64>>;

struct Context<'a> {
    docs: HashMap<&'a str, &'a Document>,
    documents: &'a [Document],
    split: &'a DatasetSplit,
    config: &'a ExperimentConfig,
    /// Documents referenced by training or test pairs, sorted.
    needed: Vec<&'a str>,
}

impl<'a> Context<'a> {
    fn doc(&self, id: &str) -> Result<&'a Document> {
        self.docs
            .get(id)
            .copied()
            .ok_or_else(|| Error::Spec(format!("pair references unknown document {id:?}")))
    }

    fn train_texts(&self) -> Result<Vec<&'a str>> {
        let ids: BTreeSet<&str> = self
            .split
            .train
            .iter()
            .flat_map(|p| [p.resume_id.as_str(), p.vacancy_id.as_str()])
            .collect();
        ids.into_iter().map(|id| Ok(self.doc(id)?.text.as_str())).collect()
    }

    fn encode_all(&self, state: &EncoderState, vocab: &Vocabulary) -> Result<Embeddings> {
        let mut out = HashMap::new();
        for &id in &self.needed {
            let input = prepare_input(&self.doc(id)?.text, vocab, self.config.training.pooling)
                .map_err(|e| Error::EmptyInput(format!("{id}: {e}")))?;
            out.insert(id.to_string(), pooled_embedding(state, &input)?);
        }
        Ok(out)
    }
}

/// Embeddings per representation, or the error that prevented them.
struct Representations {
    done: BTreeMap<Representation, std::result::Result<Embeddings, Error>>,
    training: Vec<TrainingSummary>,
}

fn build_representations(ctx: &Context, wanted: &BTreeSet<Representation>) -> Result<Representations> {
    let mut done = BTreeMap::new();
    let mut training = Vec::new();
    let seeds = ctx.config.seeds();

    if wanted.contains(&Representation::Tfidf) {
        let r = TfidfModel::fit_texts(ctx.train_texts()?, ctx.config.tfidf_dim).map(|m| {
            ctx.needed
                .iter()
                .map(|&id| (id.to_string(), m.transform_text(&ctx.docs[id].text)))
                .collect::<Embeddings>()
        });
        done.insert(Representation::Tfidf, r);
    }

    let encoder_wanted: Vec<Representation> = wanted.iter().copied().filter(|r| *r != Representation::Tfidf).collect();
    if encoder_wanted.is_empty() {
        return Ok(Representations { done, training });
    }
    let vocab = Vocabulary::fit(ctx.train_texts()?, true, ctx.config.vocab_min_count);
    let enc_cfg = ctx.config.encoder.config(vocab.len(), vocab.pad(), seeds.encoder);
    let frozen = EncoderState::init(enc_cfg)?;

    for repr in encoder_wanted {
        let result = match repr.objective() {
            None => ctx.encode_all(&frozen, &vocab),
            Some(objective) => {
                let seed = match objective {
                    Objective::Classification => seeds.train_classifier,
                    Objective::Regression => seeds.train_regressor,
                };
                let model = SiameseModel::new(frozen.clone(), objective, seeds.head);
                let cfg = ctx.config.training.config(objective, seed);
                train(ctx.split, ctx.documents, &vocab, model, &cfg).and_then(|(model, report)| {
                    training.push(TrainingSummary {
                        objective,
                        epoch_losses: report.epoch_losses,
                        optimizer_steps: report.optimizer_steps,
                        validation_roc_auc: report.validation_roc_auc,
                    });
                    ctx.encode_all(&model.encoder, &vocab)
                })
            }
        };
        done.insert(repr, result);
    }
    Ok(Representations { done, training })
}

fn cosine_scores(emb: &Embeddings, pairs: &[LabeledPair]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| cosine_similarity(&emb[&p.resume_id], &emb[&p.vacancy_id]))
        .collect()
}

fn forest_scores(ctx: &Context, emb: &Embeddings) -> Result<Vec<f64>> {
    let mode = ctx.config.forest.feature_mode;
    let features = |pairs: &[LabeledPair]| -> Result<Vec<PairFeatures>> {
        pairs
            .iter()
            .map(|p| build_features_with(&emb[&p.resume_id], &emb[&p.vacancy_id], mode))
            .collect()
    };
    let train_x = features(&ctx.split.train)?;
    let train_y: Vec<u8> = ctx.split.train.iter().map(|p| p.label).collect();
    let model = fit_forest(&train_x, &train_y, &ctx.config.forest.config(ctx.config.seeds().forest))?;
    features(&ctx.split.test)?.iter().map(|f| model.predict_proba(f)).collect()
}

/// Pairs of runs compared by t-tests: the two unsupervised cosine runs, the
/// two baseline forests, and every pair among the fine-tuned runs.
fn significance_pairs(runs: &[RunSpec]) -> Vec<(RunSpec, RunSpec)> {
    use Representation::*;
    let groups: [Vec<RunSpec>; 3] = [
        vec![RunSpec::new(Tfidf, Head::Cosine), RunSpec::new(EncoderFrozen, Head::Cosine)],
        vec![RunSpec::new(Tfidf, Head::Forest), RunSpec::new(EncoderFrozen, Head::Forest)],
        vec![
            RunSpec::new(EncoderFinetunedClassifier, Head::Cosine),
            RunSpec::new(EncoderFinetunedClassifier, Head::Forest),
            RunSpec::new(EncoderFinetunedRegressor, Head::Cosine),
            RunSpec::new(EncoderFinetunedRegressor, Head::Forest),
        ],
    ];
    let mut out = Vec::new();
    for g in &groups {
        let present: Vec<RunSpec> = g.iter().copied().filter(|r| runs.contains(r)).collect();
        for i in 0..present.len() {
            for j in i + 1..present.len() {
                out.push((present[i], present[j]));
            }
        }
    }
    out
}

/// Runs every requested representation/head combination on the test split.
/// A failing run is recorded in `failures` and the rest still complete.
pub fn run_experiment_matrix(
    documents: &[Document],
    split: &DatasetSplit,
    config: &ExperimentConfig,
) -> Result<MatrixOutcome> {
    let mut runs: Vec<RunSpec> = Vec::new();
    for r in &config.runs {
        if !runs.contains(r) {
            runs.push(*r);
        }
    }
    let mut outcome = MatrixOutcome {
        reports: Vec::new(),
        significance: Vec::new(),
        failures: Vec::new(),
        training: Vec::new(),
        notes: Vec::new(),
        n_test_pairs: split.test.len(),
        scored: Vec::new(),
    };
    if runs.is_empty() {
        return Ok(outcome);
    }
    outcome.notes.push(format!(
        "split is by pair: {} vacancies and {} resumes occur in both train and test",
        split.vacancies_shared_train_test(),
        split.resumes_shared_train_test()
    ));

    let needed: BTreeSet<&str> = split
        .train
        .iter()
        .chain(&split.test)
        .flat_map(|p| [p.resume_id.as_str(), p.vacancy_id.as_str()])
        .collect();
    let ctx = Context {
        docs: index_documents(documents),
        documents,
        split,
        config,
        needed: needed.into_iter().collect(),
    };
    for &id in &ctx.needed {
        ctx.doc(id)?;
    }

    let wanted: BTreeSet<Representation> = runs.iter().map(|r| r.representation).collect();
    let reps = build_representations(&ctx, &wanted)?;
    outcome.training = reps.training;

    let labels: Vec<u8> = split.test.iter().map(|p| p.label).collect();
    let mut scores_by_run: HashMap<RunSpec, Vec<f64>> = HashMap::new();
    for spec in &runs {
        let run_id = spec.run_id();
        let result = match &reps.done[&spec.representation] {
            Err(e) => Err(Error::Training(format!("representation unavailable: {e}"))),
            Ok(emb) => match spec.head {
                Head::Cosine => cosine_scores(emb, &split.test),
                Head::Forest => forest_scores(&ctx, emb),
            },
        }
        .and_then(|scores| {
            let scored: Vec<ScoredPair> = split
                .test
                .iter()
                .zip(&scores)
                .map(|(p, &score)| ScoredPair {
                    resume_id: p.resume_id.clone(),
                    vacancy_id: p.vacancy_id.clone(),
                    score,
                    label: p.label,
                    run_id: run_id.clone(),
                })
                .collect();
            let report = evaluate(&run_id, &scored, spec.head.threshold())?;
            Ok((scores, scored, report))
        });
        match result {
            Ok((scores, scored, report)) => {
                outcome.reports.push(report);
                outcome.scored.push(scored);
                scores_by_run.insert(*spec, scores);
            }
            Err(e) => outcome.failures.push(RunFailure {
                run_id,
                error: e.kind().into(),
                message: e.to_string(),
            }),
        }
    }

    let draws = if config.significance.bootstrap_resamples > 0 {
        bootstrap_indices(&labels, config.significance.bootstrap_resamples, config.seeds().bootstrap)
    } else {
        Vec::new()
    };
    for (a, b) in significance_pairs(&runs) {
        let (Some(sa), Some(sb)) = (scores_by_run.get(&a), scores_by_run.get(&b)) else {
            continue;
        };
        let ia = correctness_indicators(sa, &labels, a.head.threshold());
        let ib = correctness_indicators(sb, &labels, b.head.threshold());
        let mut tests = vec![(SignificanceUnit::CorrectnessIndicators, Ok(ia), Ok(ib))];
        if !draws.is_empty() {
            tests.push((
                SignificanceUnit::BootstrapAuc,
                bootstrap_auc_samples(sa, &labels, &draws),
                bootstrap_auc_samples(sb, &labels, &draws),
            ));
        }
        for (unit, xa, xb) in tests {
            match xa.and_then(|xa| SignificanceResult::compute(&a.run_id(), &b.run_id(), unit, &xa, &xb?)) {
                Ok(r) => outcome.significance.push(r),
                Err(e) => outcome.notes.push(format!(
                    "t-test {} vs {} ({unit:?}) not computed: {e}",
                    a.run_id(),
                    b.run_id()
                )),
            }
        }
    }
    Ok(outcome)
}

/// Aligned plain-text comparison table, one row per successful run.
pub fn render_table_text(outcome: &MatrixOutcome) -> String {
    let width = outcome
        .reports
        .iter()
        .map(|r| r.run_id.len())
        .chain(outcome.failures.iter().map(|f| f.run_id.len()))
        .max()
        .unwrap_or(3)
        .max(3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>7}  {:>9}  {:>6}  {:>6}  {:>9}  {:>6}",
        "run", "ROC-AUC", "precision", "recall", "F1", "threshold", "n"
    );
    for r in &outcome.reports {
        let _ = writeln!(
            s,
            "{:<width$}  {:>7.4}  {:>9.4}  {:>6.4}  {:>6.4}  {:>9.1}  {:>6}",
            r.run_id, r.roc_auc, r.precision_macro, r.recall_macro, r.f1_macro, r.threshold, r.n_samples
        );
    }
    for f in &outcome.failures {
        let _ = writeln!(s, "{:<width$}  FAILED ({}): {}", f.run_id, f.error, f.message);
    }
    s
}

pub fn render_table_csv(outcome: &MatrixOutcome) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "roc_auc", "precision_macro", "recall_macro", "f1_macro", "threshold", "n_samples"])?;
    for r in &outcome.reports {
        w.write_record([
            r.run_id.clone(),
            r.roc_auc.to_string(),
            r.precision_macro.to_string(),
            r.recall_macro.to_string(),
            r.f1_macro.to_string(),
            r.threshold.to_string(),
            r.n_samples.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_roundtrip() {
        for spec in RunSpec::all() {
            assert_eq!(spec.run_id().parse::<RunSpec>().unwrap(), spec);
        }
        assert!("tfidf".parse::<RunSpec>().is_err());
        assert!("bm25+cosine".parse::<RunSpec>().is_err());
    }

    #[test]
    fn significance_groups() {
        let all = RunSpec::all();
        assert_eq!(significance_pairs(&all).len(), 1 + 1 + 6);
        assert!(significance_pairs(&all[..1]).is_empty());
    }
}
