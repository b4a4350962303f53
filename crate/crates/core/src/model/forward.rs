use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ModelConfig, ModelError, TransformerParams};
use crate::rng::{derive_seed, seeded_rng};
use crate::Scalar;

/// Dropout behaviour of a forward pass. `Train` applies inverted dropout with
/// masks drawn deterministically from `dropout_seed`; `Eval` applies none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    Train { dropout_seed: u64 },
}

pub(crate) struct LnCache<S: Scalar> {
    pub xhat: Array2<S>,
    pub rstd: Vec<S>,
}

pub(crate) struct LayerCache<S: Scalar> {
    pub ln1: LnCache<S>,
    /// Attention input (post-ln1).
    pub a: Array2<S>,
    pub q: Array2<S>,
    pub k: Array2<S>,
    pub v: Array2<S>,
    /// Per (batch * n_heads + head): softmax probabilities before dropout.
    pub probs: Vec<Array2<S>>,
    pub attn_drop: Option<Vec<Array2<S>>>,
    /// Concatenated head outputs before the output projection.
    pub o: Array2<S>,
    pub attn_resid_mask: Option<Array2<S>>,
    pub ln2: LnCache<S>,
    /// FFN input (post-ln2).
    pub b2: Array2<S>,
    pub h1: Array2<S>,
    pub g: Array2<S>,
    pub ffn_resid_mask: Option<Array2<S>>,
}

pub(crate) struct ForwardCache<S: Scalar> {
    pub b: usize,
    pub t: usize,
    /// Flattened input ids, row-major (row = b * t + position).
    pub ids: Vec<u32>,
    pub emb_mask: Option<Array2<S>>,
    pub layers: Vec<LayerCache<S>>,
    pub lnf: LnCache<S>,
    pub xf: Array2<S>,
}

pub(crate) fn validate_batch(
    config: &ModelConfig,
    batch: &[Vec<u32>],
) -> Result<(usize, usize), ModelError> {
    config.validate()?;
    if batch.is_empty() || batch[0].is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let t = batch[0].len();
    for (row, seq) in batch.iter().enumerate() {
        if seq.len() != t {
            return Err(ModelError::RaggedBatch { row, got: seq.len(), expected: t });
        }
    }
    if t > config.max_seq_len {
        return Err(ModelError::SequenceTooLong { got: t, max: config.max_seq_len });
    }
    for seq in batch {
        for &id in seq {
            if id as usize >= config.vocab_size {
                return Err(ModelError::TokenOutOfRange { id, vocab_size: config.vocab_size });
            }
        }
    }
    Ok((batch.len(), t))
}

/// Per-row layer norm. Returns the output and the cache needed for the exact
/// backward pass.
pub(crate) fn layer_norm<S: Scalar>(
    x: &Array2<S>,
    gain: &Array2<S>,
    bias: &Array2<S>,
    eps: f64,
) -> (Array2<S>, LnCache<S>) {
    let (n, d) = x.dim();
    let dinv = S::from_f64(1.0 / d as f64);
    let eps_s = S::from_f64(eps);
    let mut xhat = Array2::zeros((n, d));
    let mut rstd = Vec::with_capacity(n);
    for (i, row) in x.outer_iter().enumerate() {
        let mut mu = S::zero();
        for &v in row.iter() {
            mu += v;
        }
        mu *= dinv;
        let mut var = S::zero();
        for &v in row.iter() {
            let c = v - mu;
            var += c * c;
        }
        var *= dinv;
        let r = (var + eps_s).sqrt().recip();
        rstd.push(r);
        for (j, &v) in row.iter().enumerate() {
            xhat[[i, j]] = (v - mu) * r;
        }
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<S: Scalar>(
    dy: &Array2<S>,
    cache: &LnCache<S>,
    gain: &Array2<S>,
) -> (Array2<S>, Array2<S>, Array2<S>) {
    let (n, d) = dy.dim();
    let dgain = colsum(&(dy * &cache.xhat));
    let dbias = colsum(dy);
    let dinv = S::from_f64(1.0 / d as f64);
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let r = cache.rstd[i];
        let mut m1 = S::zero();
        let mut m2 = S::zero();
        for j in 0..d {
            let dxh = dy[[i, j]] * gain[[0, j]];
            m1 += dxh;
            m2 += dxh * cache.xhat[[i, j]];
        }
        m1 *= dinv;
        m2 *= dinv;
        for j in 0..d {
            let dxh = dy[[i, j]] * gain[[0, j]];
            dx[[i, j]] = r * (dxh - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    (dx, dgain, dbias)
}

pub(crate) fn colsum<S: Scalar>(a: &Array2<S>) -> Array2<S> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Exact GELU, x * Phi(x) with Phi the standard normal CDF via erf.
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    half * x * (S::one() + (x * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let cdf = half * (S::one() + (x * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-half * x * x).exp();
    cdf + x * pdf
}

fn dropout_mask<S: Scalar>(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<S> {
    let keep = S::from_f64(1.0 / (1.0 - p));
    Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { S::zero() } else { keep })
}

fn maybe_mask<S: Scalar>(
    rng: &mut Option<ChaCha8Rng>,
    shape: (usize, usize),
    p: f64,
) -> Option<Array2<S>> {
    match rng {
        Some(r) if p > 0.0 => Some(dropout_mask(shape, p, r)),
        _ => None,
    }
}

/// Multi-head causal self-attention over flattened (b*t, d) projections.
/// Heads run in parallel; each (sequence, head) unit is independent, so the
/// result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
fn attention_heads<S: Scalar>(
    q: &Array2<S>,
    k: &Array2<S>,
    v: &Array2<S>,
    b: usize,
    t: usize,
    n_heads: usize,
    head_dim: usize,
    attn_masks: &Option<Vec<Array2<S>>>,
) -> (Array2<S>, Vec<Array2<S>>) {
    let scale = S::from_f64(1.0 / (head_dim as f64).sqrt());
    let results: Vec<(Array2<S>, Array2<S>)> = (0..b * n_heads)
        .into_par_iter()
        .map(|bh| {
            let bi = bh / n_heads;
            let h = bh % n_heads;
            let rows = s![bi * t..(bi + 1) * t, h * head_dim..(h + 1) * head_dim];
            let qb = q.slice(rows);
            let kb = k.slice(rows);
            let vb = v.slice(rows);
            let mut scores = qb.dot(&kb.t());
            scores.mapv_inplace(|x| x * scale);
            let mut probs = Array2::zeros((t, t));
            for i in 0..t {
                let mut maxv = S::neg_infinity();
                for j in 0..=i {
                    maxv = maxv.max(scores[[i, j]]);
                }
                let mut sum = S::zero();
                for j in 0..=i {
                    let e = (scores[[i, j]] - maxv).exp();
                    probs[[i, j]] = e;
                    sum += e;
                }
                let sinv = sum.recip();
                for j in 0..=i {
                    probs[[i, j]] *= sinv;
                }
            }
            let ob = match attn_masks {
                Some(ms) => (&probs * &ms[bh]).dot(&vb),
                None => probs.dot(&vb),
            };
            (ob, probs)
        })
        .collect();

    let mut o = Array2::zeros((b * t, n_heads * head_dim));
    let mut probs_out = Vec::with_capacity(b * n_heads);
    for (bh, (ob, pr)) in results.into_iter().enumerate() {
        let bi = bh / n_heads;
        let h = bh % n_heads;
        o.slice_mut(s![bi * t..(bi + 1) * t, h * head_dim..(h + 1) * head_dim]).assign(&ob);
        probs_out.push(pr);
    }
    (o, probs_out)
}

pub(crate) fn forward_with_cache<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    batch: &[Vec<u32>],
    mode: ForwardMode,
) -> Result<(Array2<S>, ForwardCache<S>), ModelError> {
    let (b, t) = validate_batch(config, batch)?;
    let n = b * t;
    let d = config.d_model;
    let mut drop_rng = match mode {
        ForwardMode::Train { dropout_seed } => {
            Some(seeded_rng(derive_seed(dropout_seed, "dropout")))
        }
        ForwardMode::Eval => None,
    };

    let ids: Vec<u32> = batch.iter().flatten().copied().collect();
    let mut x: Array2<S> = Array2::zeros((n, d));
    for bi in 0..b {
        for ti in 0..t {
            let r = bi * t + ti;
            let id = ids[r] as usize;
            for j in 0..d {
                x[[r, j]] = params.tok_emb[[id, j]] + params.pos_emb[[ti, j]];
            }
        }
    }
    let emb_mask = maybe_mask(&mut drop_rng, (n, d), config.dropout);
    if let Some(m) = &emb_mask {
        x = &x * m;
    }

    let mut layers = Vec::with_capacity(config.n_layers);
    for lp in &params.layers {
        let (a, ln1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias, config.layer_norm_eps);
        let q = a.dot(&lp.wq) + &lp.bq;
        let k = a.dot(&lp.wk) + &lp.bk;
        let v = a.dot(&lp.wv) + &lp.bv;
        let attn_drop = match &mut drop_rng {
            Some(rng) if config.attention_dropout > 0.0 => Some(
                (0..b * config.n_heads)
                    .map(|_| dropout_mask((t, t), config.attention_dropout, rng))
                    .collect::<Vec<_>>(),
            ),
            _ => None,
        };
        let (o, probs) =
            attention_heads(&q, &k, &v, b, t, config.n_heads, config.head_dim, &attn_drop);
        let y1 = o.dot(&lp.wo) + &lp.bo;
        let attn_resid_mask = maybe_mask(&mut drop_rng, (n, d), config.dropout);
        let y1 = match &attn_resid_mask {
            Some(m) => y1 * m,
            None => y1,
        };
        let x_mid = &x + &y1;

        let (b2, ln2) = layer_norm(&x_mid, &lp.ln2_gain, &lp.ln2_bias, config.layer_norm_eps);
        let h1 = b2.dot(&lp.w1) + &lp.b1;
        let g = h1.mapv(gelu);
        let y2 = g.dot(&lp.w2) + &lp.b2;
        let ffn_resid_mask = maybe_mask(&mut drop_rng, (n, d), config.dropout);
        let y2 = match &ffn_resid_mask {
            Some(m) => y2 * m,
            None => y2,
        };
        let x_out = &x_mid + &y2;

        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn_drop,
            o,
            attn_resid_mask,
            ln2,
            b2,
            h1,
            g,
            ffn_resid_mask,
        });
        x = x_out;
    }

    let (xf, lnf) = layer_norm(&x, &params.lnf_gain, &params.lnf_bias, config.layer_norm_eps);
    let logits = xf.dot(&params.tok_emb.t());
    Ok((logits, ForwardCache { b, t, ids, emb_mask, layers, lnf, xf }))
}

/// Runs the model over a rectangular batch of token ids and returns logits,
/// flattened to (b * t, vocab_size) with row = b * t + position.
pub fn forward<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    batch: &[Vec<u32>],
    mode: ForwardMode,
) -> Result<Array2<S>, ModelError> {
    forward_with_cache(params, config, batch, mode).map(|(logits, _)| logits)
}
