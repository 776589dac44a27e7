//! Small pre-LN transformer encoder with hand-written backpropagation.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] maps named
//! groups onto ranges of it, which keeps optimizers, checkpoints and
//! finite-difference checks trivial.

mod forward;
mod pooling;

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::MAX_TOKENS;

pub use crate::embedding::PoolingStrategy;
pub use forward::{backward, forward, forward_with_cache, ForwardCache, LayerOutputs};
pub use pooling::{
    embed_document, embed_text, pooled_backward, pooled_embedding, pooled_forward, prepare_input, EncoderInput,
    PooledForward,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn default_max_len() -> usize {
    MAX_TOKENS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Token id whose positions are masked out of attention and pooling.
    #[serde(default)]
    pub pad_id: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64 wide, 2 layers, 2 heads, feed-forward 4x wide.
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self::with_dims(vocab_size, 64, 2, 2, seed)
    }

    pub fn with_dims(
        vocab_size: usize,
        embed_dim: usize,
        n_layers: usize,
        n_heads: usize,
        seed: u64,
    ) -> Self {
        Self {
            vocab_size,
            embed_dim,
            n_layers,
            n_heads,
            ff_dim: 4 * embed_dim,
            max_len: MAX_TOKENS,
            pad_id: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.ff_dim == 0 {
            return err("vocab_size, embed_dim and ff_dim must be positive".into());
        }
        if self.n_layers == 0 || self.n_heads == 0 {
            return err("n_layers and n_heads must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return err(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.max_len != MAX_TOKENS {
            return err(format!("max_len must be {MAX_TOKENS}, got {}", self.max_len));
        }
        if self.pad_id >= self.vocab_size {
            return err(format!("pad_id {} outside vocabulary", self.pad_id));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerLayout {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub token_embedding: Range<usize>,
    pub position_embedding: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub final_ln_gain: Range<usize>,
    pub final_ln_bias: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl ParamLayout {
    pub fn new(c: &EncoderConfig) -> Self {
        let d = c.embed_dim;
        let f = c.ff_dim;
        let mut cur = Cursor(0);
        let token_embedding = cur.take(c.vocab_size * d);
        let position_embedding = cur.take(c.max_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerLayout {
                ln1_gain: cur.take(d),
                ln1_bias: cur.take(d),
                wq: cur.take(d * d),
                bq: cur.take(d),
                wk: cur.take(d * d),
                bk: cur.take(d),
                wv: cur.take(d * d),
                bv: cur.take(d),
                wo: cur.take(d * d),
                bo: cur.take(d),
                ln2_gain: cur.take(d),
                ln2_bias: cur.take(d),
                w1: cur.take(d * f),
                b1: cur.take(f),
                w2: cur.take(f * d),
                b2: cur.take(d),
            })
            .collect();
        let final_ln_gain = cur.take(d);
        let final_ln_bias = cur.take(d);
        Self {
            token_embedding,
            position_embedding,
            layers,
            final_ln_gain,
            final_ln_bias,
            total: cur.0,
        }
    }

    /// Named parameter groups in storage order.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = vec![
            ("token_embedding".to_string(), self.token_embedding.clone()),
            ("position_embedding".to_string(), self.position_embedding.clone()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, r) in [
                ("ln1_gain", &l.ln1_gain),
                ("ln1_bias", &l.ln1_bias),
                ("wq", &l.wq),
                ("bq", &l.bq),
                ("wk", &l.wk),
                ("bk", &l.bk),
                ("wv", &l.wv),
                ("bv", &l.bv),
                ("wo", &l.wo),
                ("bo", &l.bo),
                ("ln2_gain", &l.ln2_gain),
                ("ln2_bias", &l.ln2_bias),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                g.push((format!("layer{i}.{name}"), r.clone()));
            }
        }
        g.push(("final_ln_gain".to_string(), self.final_ln_gain.clone()));
        g.push(("final_ln_bias".to_string(), self.final_ln_bias.clone()));
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    config: EncoderConfig,
    layout: ParamLayout,
    pub(crate) params: Vec<f64>,
    fine_tuned: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: EncoderConfig,
    #[serde(default)]
    fine_tuned: bool,
    params: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "jobmatch-encoder/1";

impl EncoderState {
    /// Seeded initialization. Weight matrices are N(0, 1/fan_in) so a unit-variance
    /// input keeps unit-variance pre-activations; token embeddings are N(0, 1),
    /// position embeddings N(0, 0.1^2), layer-norm gains 1 and all biases 0.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |params: &mut [f64], r: &Range<usize>, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for x in &mut params[r.clone()] {
                *x = dist.sample(&mut rng);
            }
        };
        let d = config.embed_dim as f64;
        let f = config.ff_dim as f64;
        fill(&mut params, &layout.token_embedding, 1.0);
        fill(&mut params, &layout.position_embedding, 0.1);
        for l in &layout.layers {
            for w in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1] {
                fill(&mut params, w, 1.0 / d.sqrt());
            }
            fill(&mut params, &l.w2, 1.0 / f.sqrt());
            params[l.ln1_gain.clone()].fill(1.0);
            params[l.ln2_gain.clone()].fill(1.0);
        }
        params[layout.final_ln_gain.clone()].fill(1.0);
        Ok(Self {
            config,
            layout,
            params,
            fine_tuned: false,
        })
    }

    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite encoder parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
            fine_tuned: false,
        })
    }

    /// Whether the parameters came out of Siamese fine-tuning.
    pub fn is_fine_tuned(&self) -> bool {
        self.fine_tuned
    }

    pub fn set_fine_tuned(&mut self, value: bool) {
        self.fine_tuned = value;
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            fine_tuned: self.fine_tuned,
            params: self.params.clone(),
        })?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(raw)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", ck.format)));
        }
        let mut state = Self::from_params(ck.config, ck.params)?;
        state.fine_tuned = ck.fine_tuned;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }
}
