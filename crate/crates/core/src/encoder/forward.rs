use super::{EncoderState, LayerLayout, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_a_bt, matmul_at_b};
use crate::textprep::TokenSequence;

/// Token representations of every layer, row-major `len x dim` each.
/// Index 0 is the embedding layer, the last entry the final-normalized output.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutputs {
    pub seq_len: usize,
    pub dim: usize,
    pub layers: Vec<Vec<f64>>,
}

impl LayerOutputs {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn last(&self) -> &[f64] {
        self.layers.last().expect("at least one layer")
    }

    pub fn token(&self, layer: usize, pos: usize) -> &[f64] {
        &self.layers[layer][pos * self.dim..(pos + 1) * self.dim]
    }
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per-head attention weights, `heads x len x len`.
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    ids: Vec<usize>,
    valid: Vec<bool>,
    blocks: Vec<BlockCache>,
    final_norm: NormCache,
}

impl ForwardCache {
    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, d: usize) -> (Vec<f64>, NormCache) {
    let mut out = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, NormCache { xhat, inv_std })
}

/// Accumulates into `dx`, `dgain` and `dbias`.
fn layer_norm_backward(
    dy: &[f64],
    cache: &NormCache,
    gain: &[f64],
    rows: usize,
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        for j in 0..d {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] += is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `x (rows x n_in) * w (n_in x n_out) + b`.
fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * n_out];
    for r in 0..rows {
        y[r * n_out..(r + 1) * n_out].copy_from_slice(b);
    }
    matmul(x, w, &mut y, rows, n_in, n_out, true);
    y
}

/// Accumulates weight and bias gradients, and `dy * w^T` into `dx`.
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    matmul_at_b(x, dy, dw, rows, n_in, n_out, true);
    for r in 0..rows {
        for (acc, g) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
            *acc += g;
        }
    }
    matmul_a_bt(dy, w, dx, rows, n_out, n_in, true);
}

fn head_slice(x: &[f64], rows: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        out.extend_from_slice(&x[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn head_scatter_add(dst: &mut [f64], src: &[f64], rows: usize, d: usize, h: usize, dh: usize) {
    for r in 0..rows {
        for j in 0..dh {
            dst[r * d + h * dh + j] += src[r * dh + j];
        }
    }
}

struct Dims {
    len: usize,
    d: usize,
    ff: usize,
    heads: usize,
    dh: usize,
}

fn block_forward(p: &[f64], l: &LayerLayout, h_in: &[f64], valid: &[bool], dims: &Dims) -> (Vec<f64>, BlockCache) {
    let Dims { len, d, ff, heads, dh } = *dims;
    let (a, ln1) = layer_norm(h_in, &p[l.ln1_gain.clone()], &p[l.ln1_bias.clone()], len, d);
    let q = linear(&a, &p[l.wq.clone()], &p[l.bq.clone()], len, d, d);
    let k = linear(&a, &p[l.wk.clone()], &p[l.bk.clone()], len, d, d);
    let v = linear(&a, &p[l.wv.clone()], &p[l.bv.clone()], len, d, d);

    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * len * len];
    let mut attn = vec![0.0; len * d];
    for h in 0..heads {
        let qh = head_slice(&q, len, d, h, dh);
        let kh = head_slice(&k, len, d, h, dh);
        let vh = head_slice(&v, len, d, h, dh);
        let ph = &mut probs[h * len * len..(h + 1) * len * len];
        matmul_a_bt(&qh, &kh, ph, len, dh, len, false);
        for i in 0..len {
            let row = &mut ph[i * len..(i + 1) * len];
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                if valid[j] {
                    row[j] *= scale;
                    max = max.max(row[j]);
                }
            }
            let mut sum = 0.0;
            for j in 0..len {
                if valid[j] {
                    row[j] = (row[j] - max).exp();
                    sum += row[j];
                } else {
                    row[j] = 0.0;
                }
            }
            if sum > 0.0 {
                row.iter_mut().for_each(|x| *x /= sum);
            }
        }
        let mut oh = vec![0.0; len * dh];
        matmul(ph, &vh, &mut oh, len, len, dh, false);
        head_scatter_add(&mut attn, &oh, len, d, h, dh);
    }

    let proj = linear(&attn, &p[l.wo.clone()], &p[l.bo.clone()], len, d, d);
    let h_mid: Vec<f64> = h_in.iter().zip(&proj).map(|(x, y)| x + y).collect();
    let (b, ln2) = layer_norm(&h_mid, &p[l.ln2_gain.clone()], &p[l.ln2_bias.clone()], len, d);
    let pre_act = linear(&b, &p[l.w1.clone()], &p[l.b1.clone()], len, d, ff);
    let act: Vec<f64> = pre_act.iter().map(|&x| gelu(x)).collect();
    let out = linear(&act, &p[l.w2.clone()], &p[l.b2.clone()], len, ff, d);
    let h_out: Vec<f64> = h_mid.iter().zip(&out).map(|(x, y)| x + y).collect();
    (
        h_out,
        BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            b,
            pre_act,
            act,
        },
    )
}

/// Returns the gradient with respect to the block input.
fn block_backward(
    p: &[f64],
    l: &LayerLayout,
    c: &BlockCache,
    dh_out: &[f64],
    dims: &Dims,
    grads: &mut [f64],
) -> Vec<f64> {
    let Dims { len, d, ff, heads, dh } = *dims;

    // Feed-forward sublayer: h_out = h_mid + W2 gelu(W1 LN2(h_mid)).
    let mut dh_mid = dh_out.to_vec();
    let mut dact = vec![0.0; len * ff];
    {
        let (dw2, db2) = split_pair(grads, &l.w2, &l.b2);
        linear_backward(&c.act, &p[l.w2.clone()], dh_out, len, ff, d, &mut dact, dw2, db2);
    }
    let dpre: Vec<f64> = dact.iter().zip(&c.pre_act).map(|(g, &x)| g * gelu_grad(x)).collect();
    let mut db_ln = vec![0.0; len * d];
    {
        let (dw1, db1) = split_pair(grads, &l.w1, &l.b1);
        linear_backward(&c.b, &p[l.w1.clone()], &dpre, len, d, ff, &mut db_ln, dw1, db1);
    }
    {
        let (dg, dbias) = split_pair(grads, &l.ln2_gain, &l.ln2_bias);
        layer_norm_backward(&db_ln, &c.ln2, &p[l.ln2_gain.clone()], len, d, &mut dh_mid, dg, dbias);
    }

    // Attention sublayer: h_mid = h_in + Wo attn(LN1(h_in)).
    let mut dh_in = dh_mid.clone();
    let mut dattn = vec![0.0; len * d];
    {
        let (dwo, dbo) = split_pair(grads, &l.wo, &l.bo);
        linear_backward(&c.attn, &p[l.wo.clone()], &dh_mid, len, d, d, &mut dattn, dwo, dbo);
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    let mut dp = vec![0.0; len * len];
    for h in 0..heads {
        let ph = &c.probs[h * len * len..(h + 1) * len * len];
        let qh = head_slice(&c.q, len, d, h, dh);
        let kh = head_slice(&c.k, len, d, h, dh);
        let vh = head_slice(&c.v, len, d, h, dh);
        let doh = head_slice(&dattn, len, d, h, dh);

        matmul_a_bt(&doh, &vh, &mut dp, len, dh, len, false);
        let mut dvh = vec![0.0; len * dh];
        matmul_at_b(ph, &doh, &mut dvh, len, len, dh, false);

        // Softmax backward, folded with the score scale.
        for i in 0..len {
            let prow = &ph[i * len..(i + 1) * len];
            let drow = &mut dp[i * len..(i + 1) * len];
            let s: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
            for j in 0..len {
                drow[j] = prow[j] * (drow[j] - s) * scale;
            }
        }
        let mut dqh = vec![0.0; len * dh];
        matmul(&dp, &kh, &mut dqh, len, len, dh, false);
        let mut dkh = vec![0.0; len * dh];
        matmul_at_b(&dp, &qh, &mut dkh, len, len, dh, false);

        head_scatter_add(&mut dq, &dqh, len, d, h, dh);
        head_scatter_add(&mut dk, &dkh, len, d, h, dh);
        head_scatter_add(&mut dv, &dvh, len, d, h, dh);
    }
    let mut da = vec![0.0; len * d];
    for (dy, w, b) in [(&dq, &l.wq, &l.bq), (&dk, &l.wk, &l.bk), (&dv, &l.wv, &l.bv)] {
        let (dw, db) = split_pair(grads, w, b);
        linear_backward(&c.a, &p[w.clone()], dy, len, d, d, &mut da, dw, db);
    }
    {
        let (dg, dbias) = split_pair(grads, &l.ln1_gain, &l.ln1_bias);
        layer_norm_backward(&da, &c.ln1, &p[l.ln1_gain.clone()], len, d, &mut dh_in, dg, dbias);
    }
    dh_in
}

/// Two disjoint mutable views into the flat gradient; `a` must precede `b`.
fn split_pair<'g>(
    grads: &'g mut [f64],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grads.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

fn check_sequence(state: &EncoderState, seq: &TokenSequence) -> Result<()> {
    let c = state.config();
    if seq.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    if seq.len() > c.max_len {
        return Err(Error::Shape(format!(
            "sequence of {} tokens exceeds the {} token limit",
            seq.len(),
            c.max_len
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id >= c.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {bad} outside vocabulary of {}",
            c.vocab_size
        )));
    }
    Ok(())
}

pub fn forward(state: &EncoderState, seq: &TokenSequence) -> Result<LayerOutputs> {
    forward_with_cache(state, seq).map(|(out, _)| out)
}

pub fn forward_with_cache(state: &EncoderState, seq: &TokenSequence) -> Result<(LayerOutputs, ForwardCache)> {
    check_sequence(state, seq)?;
    let c = state.config();
    let lay = state.layout();
    let p = state.params();
    let dims = Dims {
        len: seq.len(),
        d: c.embed_dim,
        ff: c.ff_dim,
        heads: c.n_heads,
        dh: c.head_dim(),
    };
    let (len, d) = (dims.len, dims.d);
    let valid: Vec<bool> = seq.ids.iter().map(|&id| id != c.pad_id).collect();

    let mut h = vec![0.0; len * d];
    for (pos, &id) in seq.ids.iter().enumerate() {
        let tok = &p[lay.token_embedding.start + id * d..][..d];
        let posv = &p[lay.position_embedding.start + pos * d..][..d];
        for j in 0..d {
            h[pos * d + j] = tok[j] + posv[j];
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers + 1);
    let mut blocks = Vec::with_capacity(c.n_layers);
    for l in &lay.layers {
        let (next, cache) = block_forward(p, l, &h, &valid, &dims);
        layers.push(std::mem::replace(&mut h, next));
        blocks.push(cache);
    }
    let (out, final_norm) = layer_norm(&h, &p[lay.final_ln_gain.clone()], &p[lay.final_ln_bias.clone()], len, d);
    layers.push(out);

    Ok((
        LayerOutputs { seq_len: len, dim: d, layers },
        ForwardCache {
            ids: seq.ids.clone(),
            valid,
            blocks,
            final_norm,
        },
    ))
}

/// Backpropagates gradients given per layer output (`None` means zero) and
/// accumulates parameter gradients into `grads`.
pub fn backward(
    state: &EncoderState,
    cache: &ForwardCache,
    d_outputs: &[Option<&[f64]>],
    grads: &mut [f64],
) -> Result<()> {
    let c = state.config();
    let lay = state.layout();
    let p = state.params();
    if d_outputs.len() != c.n_layers + 1 {
        return Err(Error::Shape(format!(
            "expected {} output gradients, got {}",
            c.n_layers + 1,
            d_outputs.len()
        )));
    }
    if grads.len() != p.len() {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    let dims = Dims {
        len: cache.ids.len(),
        d: c.embed_dim,
        ff: c.ff_dim,
        heads: c.n_heads,
        dh: c.head_dim(),
    };
    let (len, d) = (dims.len, dims.d);
    for g in d_outputs.iter().flatten() {
        if g.len() != len * d {
            return Err(Error::Shape("output gradient has wrong length".into()));
        }
    }

    let mut dh = vec![0.0; len * d];
    if let Some(g) = d_outputs[c.n_layers] {
        let (dg, db) = split_pair(grads, &lay.final_ln_gain, &lay.final_ln_bias);
        layer_norm_backward(g, &cache.final_norm, &p[lay.final_ln_gain.clone()], len, d, &mut dh, dg, db);
    }
    for i in (0..c.n_layers).rev() {
        dh = block_backward(p, &lay.layers[i], &cache.blocks[i], &dh, &dims, grads);
        if let Some(g) = d_outputs[i] {
            dh.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
        }
    }
    for (pos, &id) in cache.ids.iter().enumerate() {
        let row = &dh[pos * d..(pos + 1) * d];
        let t0 = lay.token_embedding.start + id * d;
        let p0 = lay.position_embedding.start + pos * d;
        for j in 0..d {
            grads[t0 + j] += row[j];
            grads[p0 + j] += row[j];
        }
    }
    Ok(())
}
