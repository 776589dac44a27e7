use super::forward::{backward, forward, forward_with_cache, ForwardCache, LayerOutputs};
use super::{EncoderState, PoolingStrategy};
use crate::corpus::Document;
use crate::embedding::{DocumentEmbedding, Producer};
use crate::error::{Error, Result};
use crate::textprep::{split_sentences, tokenize, truncate, TokenSequence, TokenizeOptions, Vocabulary, MAX_TOKENS};

/// Token sequences for one document plus the weight each contributes to the
/// pooled vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub strategy: PoolingStrategy,
    pub sequences: Vec<TokenSequence>,
    pub weights: Vec<f64>,
}

/// Tokenizes `text` for the given strategy. Whole-document strategies keep
/// the first 512 tokens (CLS included); sentence strategies encode each
/// sentence separately under the same cap and drop sentences without words.
pub fn prepare_input(text: &str, vocab: &Vocabulary, strategy: PoolingStrategy) -> Result<EncoderInput> {
    let opts = TokenizeOptions::default();
    let (sequences, weights) = match strategy {
        PoolingStrategy::MeanTokens | PoolingStrategy::ClsLast4Mean => {
            let seq = tokenize(text, vocab, opts);
            if seq.len() <= 1 {
                (vec![], vec![])
            } else {
                (vec![truncate(&seq, MAX_TOKENS)], vec![1.0])
            }
        }
        PoolingStrategy::SentenceMean | PoolingStrategy::SentenceWeightedMean => {
            let mut seqs = Vec::new();
            let mut weights = Vec::new();
            for sentence in split_sentences(text) {
                let seq = truncate(&tokenize(&sentence, vocab, opts), MAX_TOKENS);
                let words = seq.len() - 1;
                if words == 0 {
                    continue;
                }
                weights.push(if strategy == PoolingStrategy::SentenceMean {
                    1.0
                } else {
                    words as f64
                });
                seqs.push(seq);
            }
            (seqs, weights)
        }
    };
    if sequences.is_empty() {
        return Err(Error::EmptyInput("document has no word tokens".into()));
    }
    Ok(EncoderInput {
        strategy,
        sequences,
        weights,
    })
}

/// Pooled embedding with the caches needed to backpropagate through it.
#[derive(Clone, Debug)]
pub struct PooledForward {
    pub embedding: Vec<f64>,
    strategy: PoolingStrategy,
    caches: Vec<ForwardCache>,
    weights: Vec<f64>,
}

fn check_strategy(state: &EncoderState, strategy: PoolingStrategy) -> Result<()> {
    if strategy == PoolingStrategy::ClsLast4Mean && state.config().n_layers < 4 {
        return Err(Error::Strategy(format!(
            "cls_last4_mean needs at least 4 layers, encoder has {}",
            state.config().n_layers
        )));
    }
    Ok(())
}

/// Mean of final-layer vectors over non-pad positions.
pub(crate) fn mean_tokens(out: &LayerOutputs, valid: &[bool]) -> Result<Vec<f64>> {
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(Error::EmptyInput("sequence has only padding".into()));
    }
    let mut m = vec![0.0; out.dim];
    let last = out.n_layers() - 1;
    for pos in (0..out.seq_len).filter(|&p| valid[p]) {
        for (acc, x) in m.iter_mut().zip(out.token(last, pos)) {
            *acc += x;
        }
    }
    m.iter_mut().for_each(|x| *x /= n as f64);
    Ok(m)
}

pub(crate) fn cls_last4(out: &LayerOutputs) -> Vec<f64> {
    let mut m = vec![0.0; out.dim];
    let n = out.n_layers();
    for layer in n - 4..n {
        for (acc, x) in m.iter_mut().zip(out.token(layer, 0)) {
            *acc += x / 4.0;
        }
    }
    m
}

pub(crate) fn weighted_average(vectors: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut m = vec![0.0; vectors[0].len()];
    for (v, w) in vectors.iter().zip(weights) {
        for (acc, x) in m.iter_mut().zip(v) {
            *acc += x * w / total;
        }
    }
    m
}

fn pool_one(state: &EncoderState, strategy: PoolingStrategy, out: &LayerOutputs, seq: &TokenSequence) -> Result<Vec<f64>> {
    match strategy {
        PoolingStrategy::ClsLast4Mean => Ok(cls_last4(out)),
        _ => {
            let pad = state.config().pad_id;
            let valid: Vec<bool> = seq.ids.iter().map(|&id| id != pad).collect();
            mean_tokens(out, &valid)
        }
    }
}

fn pooled(state: &EncoderState, input: &EncoderInput, keep_cache: bool) -> Result<PooledForward> {
    check_strategy(state, input.strategy)?;
    let mut vectors = Vec::with_capacity(input.sequences.len());
    let mut caches = Vec::new();
    for seq in &input.sequences {
        let out = if keep_cache {
            let (out, cache) = forward_with_cache(state, seq)?;
            caches.push(cache);
            out
        } else {
            forward(state, seq)?
        };
        vectors.push(pool_one(state, input.strategy, &out, seq)?);
    }
    Ok(PooledForward {
        embedding: weighted_average(&vectors, &input.weights),
        strategy: input.strategy,
        caches,
        weights: input.weights.clone(),
    })
}

/// Pooled embedding of a prepared input, without keeping backward caches.
pub fn pooled_embedding(state: &EncoderState, input: &EncoderInput) -> Result<Vec<f64>> {
    Ok(pooled(state, input, false)?.embedding)
}

pub fn pooled_forward(state: &EncoderState, input: &EncoderInput) -> Result<PooledForward> {
    pooled(state, input, true)
}

/// Accumulates the parameter gradient of `d_embedding . embedding` into `grads`.
pub fn pooled_backward(state: &EncoderState, pf: &PooledForward, d_embedding: &[f64], grads: &mut [f64]) -> Result<()> {
    let c = state.config();
    let d = c.embed_dim;
    if d_embedding.len() != d {
        return Err(Error::Shape(format!("embedding gradient has length {}, expected {d}", d_embedding.len())));
    }
    if pf.caches.is_empty() {
        return Err(Error::Training("pooled forward was run without caches".into()));
    }
    let total: f64 = pf.weights.iter().sum();
    for (cache, w) in pf.caches.iter().zip(&pf.weights) {
        let share = w / total;
        let valid = cache.valid_mask();
        let len = valid.len();
        let mut d_out: Vec<Option<Vec<f64>>> = vec![None; c.n_layers + 1];
        match pf.strategy {
            PoolingStrategy::ClsLast4Mean => {
                for slot in d_out.iter_mut().skip(c.n_layers + 1 - 4) {
                    let mut g = vec![0.0; len * d];
                    for j in 0..d {
                        g[j] = d_embedding[j] * share / 4.0;
                    }
                    *slot = Some(g);
                }
            }
            _ => {
                let n = valid.iter().filter(|v| **v).count() as f64;
                let mut g = vec![0.0; len * d];
                for pos in (0..len).filter(|&p| valid[p]) {
                    for j in 0..d {
                        g[pos * d + j] = d_embedding[j] * share / n;
                    }
                }
                d_out[c.n_layers] = Some(g);
            }
        }
        let refs: Vec<Option<&[f64]>> = d_out.iter().map(|g| g.as_deref()).collect();
        backward(state, cache, &refs, grads)?;
    }
    Ok(())
}

fn check_vocab(state: &EncoderState, vocab: &Vocabulary) -> Result<()> {
    let c = state.config();
    if vocab.len() != c.vocab_size || vocab.pad() != c.pad_id {
        return Err(Error::Config(format!(
            "vocabulary of {} tokens (pad {}) does not match encoder ({} tokens, pad {})",
            vocab.len(),
            vocab.pad(),
            c.vocab_size,
            c.pad_id
        )));
    }
    Ok(())
}

pub fn embed_text(state: &EncoderState, text: &str, strategy: PoolingStrategy, vocab: &Vocabulary) -> Result<Vec<f64>> {
    check_vocab(state, vocab)?;
    check_strategy(state, strategy)?;
    let input = prepare_input(text, vocab, strategy)?;
    Ok(pooled(state, &input, false)?.embedding)
}

pub fn embed_document(
    state: &EncoderState,
    doc: &Document,
    strategy: PoolingStrategy,
    vocab: &Vocabulary,
) -> Result<DocumentEmbedding> {
    let vector = embed_text(state, &doc.text, strategy, vocab).map_err(|e| match e {
        Error::EmptyInput(m) => Error::EmptyInput(format!("{}: {m}", doc.doc_id)),
        other => other,
    })?;
    let producer = if state.is_fine_tuned() {
        Producer::EncoderFinetuned
    } else {
        Producer::EncoderFrozen
    };
    Ok(DocumentEmbedding::new(vector, producer, Some(strategy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use crate::encoder::EncoderConfig;

    fn setup(layers: usize) -> (EncoderState, Vocabulary) {
        let vocab = Vocabulary::from_tokens(&["alpha", "beta", "gamma", "delta", "epsilon"]);
        let cfg = EncoderConfig::with_dims(vocab.len(), 8, layers, 2, 11);
        (EncoderState::init(cfg).unwrap(), vocab)
    }

    #[test]
    fn identical_token_vectors_average_to_themselves() {
        let v = vec![0.5, -1.0, 2.0];
        let out = LayerOutputs {
            seq_len: 4,
            dim: 3,
            layers: vec![v.repeat(4)],
        };
        assert_eq!(mean_tokens(&out, &[true, true, true, false]).unwrap(), v);
    }

    #[test]
    fn weighted_mean_of_two_sentences() {
        let a = vec![1.0, 0.0, 4.0];
        let b = vec![0.0, 2.0, -4.0];
        let m = weighted_average(&[a.clone(), b.clone()], &[3.0, 1.0]);
        for j in 0..3 {
            assert!((m[j] - (3.0 * a[j] + b[j]) / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sentence_weights_count_words() {
        let (_, vocab) = setup(1);
        let input = prepare_input("Alpha beta gamma. Delta!", &vocab, PoolingStrategy::SentenceWeightedMean).unwrap();
        assert_eq!(input.weights, vec![3.0, 1.0]);
        assert_eq!(input.sequences[0].ids[0], vocab.cls());
    }

    #[test]
    fn single_sentence_strategies_agree() {
        let (state, vocab) = setup(2);
        let text = "alpha beta gamma delta";
        let a = embed_text(&state, text, PoolingStrategy::SentenceMean, &vocab).unwrap();
        let b = embed_text(&state, text, PoolingStrategy::SentenceWeightedMean, &vocab).unwrap();
        assert_eq!(a, b);
        let c = embed_text(&state, text, PoolingStrategy::MeanTokens, &vocab).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn cls_strategy_needs_four_layers() {
        let (state, vocab) = setup(2);
        let r = embed_text(&state, "alpha", PoolingStrategy::ClsLast4Mean, &vocab);
        assert!(matches!(r, Err(Error::Strategy(_))));
        let (deep, vocab) = setup(4);
        let v = embed_text(&deep, "alpha beta", PoolingStrategy::ClsLast4Mean, &vocab).unwrap();
        let seq = tokenize("alpha beta", &vocab, TokenizeOptions::default());
        let out = forward(&deep, &seq).unwrap();
        let manual: Vec<f64> = (0..8).map(|j| (1..=4).map(|l| out.token(l, 0)[j]).sum::<f64>() / 4.0).collect();
        for (x, y) in v.iter().zip(&manual) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_document_is_rejected() {
        let (state, vocab) = setup(1);
        let doc = Document::new("r1", Role::Resume, "en", " ... ");
        for s in [PoolingStrategy::MeanTokens, PoolingStrategy::SentenceMean] {
            assert!(matches!(embed_document(&state, &doc, s, &vocab), Err(Error::EmptyInput(_))));
        }
    }

    #[test]
    fn embeddings_are_finite_and_sized() {
        let (state, vocab) = setup(2);
        let doc = Document::new("r1", Role::Resume, "en", "alpha beta. unknown words here! gamma");
        for s in [
            PoolingStrategy::MeanTokens,
            PoolingStrategy::SentenceMean,
            PoolingStrategy::SentenceWeightedMean,
        ] {
            let e = embed_document(&state, &doc, s, &vocab).unwrap();
            assert_eq!(e.dim(), 8);
            assert!(e.is_finite());
            assert_eq!(e.producer, Producer::EncoderFrozen);
        }
    }

    #[test]
    fn mismatched_vocabulary_is_config_error() {
        let (state, _) = setup(1);
        let other = Vocabulary::from_tokens(&["x"]);
        assert!(matches!(
            embed_text(&state, "x", PoolingStrategy::MeanTokens, &other),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pooled_backward_matches_finite_differences() {
        for (layers, strategy) in [
            (2, PoolingStrategy::MeanTokens),
            (2, PoolingStrategy::SentenceWeightedMean),
            (4, PoolingStrategy::ClsLast4Mean),
        ] {
            let (mut state, vocab) = setup(layers);
            let input = prepare_input("alpha beta gamma. delta epsilon", &vocab, strategy).unwrap();
            let w: Vec<f64> = (0..8).map(|j| (j as f64 * 0.7).sin()).collect();
            let f = |s: &EncoderState| -> f64 {
                let e = pooled(s, &input, false).unwrap().embedding;
                e.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let pf = pooled_forward(&state, &input).unwrap();
            let mut grads = vec![0.0; state.params().len()];
            pooled_backward(&state, &pf, &w, &mut grads).unwrap();
            let eps = 1e-5;
            for i in (0..grads.len()).step_by(97) {
                let orig = state.params[i];
                state.params[i] = orig + eps;
                let up = f(&state);
                state.params[i] = orig - eps;
                let down = f(&state);
                state.params[i] = orig;
                let num = (up - down) / (2.0 * eps);
                let err = (num - grads[i]).abs() / (num.abs() + grads[i].abs()).max(1e-7);
                assert!(err < 1e-5, "{strategy:?} param {i}: {num} vs {}", grads[i]);
            }
        }
    }
}
