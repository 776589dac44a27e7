use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Tfidf,
    EncoderFrozen,
    EncoderFinetuned,
}

/// How token representations are reduced to one document vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    /// Mean of final-layer vectors over the first 512 tokens.
    #[default]
    MeanTokens,
    /// Each sentence encoded on its own, sentence vectors averaged.
    SentenceMean,
    /// As `SentenceMean`, weighted by sentence token count.
    SentenceWeightedMean,
    /// CLS position averaged over the last four layers.
    ClsLast4Mean,
}

impl std::str::FromStr for PoolingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_tokens" => Ok(Self::MeanTokens),
            "sentence_mean" => Ok(Self::SentenceMean),
            "sentence_weighted_mean" => Ok(Self::SentenceWeightedMean),
            "cls_last4_mean" => Ok(Self::ClsLast4Mean),
            other => Err(format!("unknown pooling strategy {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentEmbedding {
    pub vector: Vec<f64>,
    pub producer: Producer,
    pub pooling: Option<PoolingStrategy>,
}

impl DocumentEmbedding {
    pub fn new(vector: Vec<f64>, producer: Producer, pooling: Option<PoolingStrategy>) -> Self {
        Self {
            vector,
            producer,
            pooling,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|x| x.is_finite())
    }
}
