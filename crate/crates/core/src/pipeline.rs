//! Experiment configuration and the text embedders shared by evaluation,
//! retrieval and the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_synthetic_corpus, split_dataset, DatasetSplit, Document, SplitFractions, SyntheticCorpus,
    SyntheticCorpusSpec,
};
use crate::embedding::{DocumentEmbedding, PoolingStrategy, Producer};
use crate::encoder::{embed_text, EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::evalkit::{run_experiment_matrix, Head, MatrixOutcome, Representation, RunSpec};
use crate::forest::{FeatureMode, ForestConfig};
use crate::siamese::{Objective, OptimizerKind, TrainingConfig};
use crate::textprep::Vocabulary;
use crate::tfidf::{TfidfModel, DEFAULT_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Defaults to four times `embed_dim`.
    #[serde(default)]
    pub ff_dim: Option<usize>,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            n_layers: 2,
            n_heads: 2,
            ff_dim: None,
        }
    }
}

impl EncoderParams {
    pub fn config(&self, vocab_size: usize, pad_id: usize, seed: u64) -> EncoderConfig {
        let mut c = EncoderConfig::with_dims(vocab_size, self.embed_dim, self.n_layers, self.n_heads, seed);
        if let Some(ff) = self.ff_dim {
            c.ff_dim = ff;
        }
        c.pad_id = pad_id;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub pooling: PoolingStrategy,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 4,
            learning_rate: 2e-4,
            pooling: PoolingStrategy::MeanTokens,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainingParams {
    pub fn config(&self, objective: Objective, seed: u64) -> TrainingConfig {
        TrainingConfig {
            objective,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            pooling: self.pooling,
            seed,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    #[serde(default)]
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    #[serde(default)]
    pub feature_mode: FeatureMode,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            feature_mode: FeatureMode::Concat,
        }
    }
}

impl ForestParams {
    pub fn config(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            features_per_split: self.features_per_split,
            bootstrap: self.bootstrap,
            seed,
        }
    }
}

fn default_resamples() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceParams {
    /// Bootstrap resamples of the test pairs; 0 disables the bootstrap tests.
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

impl Default for SignificanceParams {
    fn default() -> Self {
        Self {
            bootstrap_resamples: default_resamples(),
        }
    }
}

fn default_min_count() -> usize {
    1
}

fn default_tfidf_dim() -> usize {
    DEFAULT_DIM
}

/// Everything one experiment needs, in one JSON file. Component seeds are
/// derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: SyntheticCorpusSpec,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default = "default_tfidf_dim")]
    pub tfidf_dim: usize,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
    #[serde(default)]
    pub encoder: EncoderParams,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub significance: SignificanceParams,
    #[serde(default = "RunSpec::all")]
    pub runs: Vec<RunSpec>,
}

/// Per-component seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub split: u64,
    pub encoder: u64,
    pub head: u64,
    pub train_classifier: u64,
    pub train_regressor: u64,
    pub forest: u64,
    pub bootstrap: u64,
}

/// SplitMix64 finalizer; spreads `seed + stream` into unrelated seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    pub fn new(corpus: SyntheticCorpusSpec, seed: u64) -> Self {
        Self {
            seed,
            corpus,
            split: SplitFractions::default(),
            tfidf_dim: DEFAULT_DIM,
            vocab_min_count: 1,
            encoder: EncoderParams::default(),
            training: TrainingParams::default(),
            forest: ForestParams::default(),
            significance: SignificanceParams::default(),
            runs: RunSpec::all(),
        }
        .with_seed(seed)
    }

    /// Laptop-sized experiment: 5,000 pairs, a 32-wide encoder and three
    /// epochs of fine-tuning.
    pub fn desk_scale(seed: u64) -> Self {
        let mut c = Self::new(SyntheticCorpusSpec::desk_scale(0), seed);
        c.encoder.embed_dim = 32;
        c.training.epochs = 3;
        c
    }

    /// Replaces the master seed, and with it the corpus seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = self.seeds().corpus;
        self
    }

    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            corpus: mix(s, 1),
            split: mix(s, 2),
            encoder: mix(s, 3),
            head: mix(s, 4),
            train_classifier: mix(s, 5),
            train_regressor: mix(s, 6),
            forest: mix(s, 7),
            bootstrap: mix(s, 8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        let sum = self.split.train + self.split.validation + self.split.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}")));
        }
        if self.tfidf_dim == 0 {
            return Err(Error::Config("tfidf_dim must be positive".into()));
        }
        self.encoder.config(8, 0, 0).validate()?;
        self.training.config(Objective::Regression, 0).validate()?;
        self.forest.config(0).validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&raw)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Something that turns text into a fixed-width embedding.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn producer(&self) -> Producer;
    fn embed(&self, text: &str) -> Result<DocumentEmbedding>;

    fn embed_document(&self, doc: &Document) -> Result<DocumentEmbedding> {
        self.embed(&doc.text)
    }
}

impl Embedder for TfidfModel {
    fn dim(&self) -> usize {
        TfidfModel::dim(self)
    }

    fn producer(&self) -> Producer {
        Producer::Tfidf
    }

    fn embed(&self, text: &str) -> Result<DocumentEmbedding> {
        Ok(DocumentEmbedding::new(self.transform_text(text), Producer::Tfidf, None))
    }
}

/// Encoder with the vocabulary and pooling it is used with.
#[derive(Clone, Debug)]
pub struct EncoderEmbedder {
    pub state: EncoderState,
    pub vocab: Vocabulary,
    pub pooling: PoolingStrategy,
}

impl Embedder for EncoderEmbedder {
    fn dim(&self) -> usize {
        self.state.config().embed_dim
    }

    fn producer(&self) -> Producer {
        if self.state.is_fine_tuned() {
            Producer::EncoderFinetuned
        } else {
            Producer::EncoderFrozen
        }
    }

    fn embed(&self, text: &str) -> Result<DocumentEmbedding> {
        let v = embed_text(&self.state, text, self.pooling, &self.vocab)?;
        Ok(DocumentEmbedding::new(v, self.producer(), Some(self.pooling)))
    }
}

/// Generated corpus, its split and the evaluated run matrix.
pub struct PipelineOutput {
    pub corpus: SyntheticCorpus,
    pub split: DatasetSplit,
    pub outcome: MatrixOutcome,
}

/// Generates the synthetic corpus, splits it and evaluates every configured run.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let corpus = generate_synthetic_corpus(&config.corpus)?;
    let split = split_dataset(&corpus.pairs, config.split, config.seeds().split)?;
    let outcome = run_experiment_matrix(&corpus.documents, &split, config)?;
    Ok(PipelineOutput { corpus, split, outcome })
}

impl RunSpec {
    pub fn all() -> Vec<RunSpec> {
        let mut v = Vec::with_capacity(8);
        for representation in [
            Representation::Tfidf,
            Representation::EncoderFrozen,
            Representation::EncoderFinetunedClassifier,
            Representation::EncoderFinetunedRegressor,
        ] {
            for head in [Head::Cosine, Head::Forest] {
                v.push(RunSpec { representation, head });
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec::reference_shape(0)
    }

    #[test]
    fn seeds_follow_master_seed() {
        let a = ExperimentConfig::new(spec(), 1);
        let b = ExperimentConfig::new(spec(), 1);
        let c = ExperimentConfig::new(spec(), 2);
        assert_eq!(a.seeds(), b.seeds());
        assert_ne!(a.seeds(), c.seeds());
        assert_eq!(a.corpus.seed, a.seeds().corpus);
        let s = a.seeds();
        let all = [s.corpus, s.split, s.encoder, s.head, s.train_classifier, s.train_regressor, s.forest, s.bootstrap];
        let unique: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
    }

    #[test]
    fn config_roundtrips_and_defaults_fill_in() {
        let c = ExperimentConfig::new(spec(), 7);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.runs.len(), 8);
        let minimal = format!(r#"{{"seed": 3, "corpus": {}}}"#, serde_json::to_string(&spec()).unwrap());
        let m: ExperimentConfig = serde_json::from_str(&minimal).unwrap();
        assert_eq!(m.training.epochs, 5);
        assert_eq!(m.training.batch_size, 4);
        assert_eq!(m.forest.n_trees, 100);
        assert_eq!(m.tfidf_dim, 768);
        assert!(m.validate().is_ok());
    }
}
