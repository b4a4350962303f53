use ndarray::{s, Array2};
use rayon::prelude::*;

use super::forward::{
    colsum, forward_with_cache, gelu_grad, layer_norm_backward, ForwardMode, LayerCache,
};
use super::scoring::{flatten_targets, mean_cross_entropy};
use super::{ModelConfig, ModelError, TransformerParams};
use crate::Scalar;

/// One combined forward/backward pass. Returns the mean cross-entropy loss
/// and exact analytic gradients for every parameter tensor, in the same
/// structure as `params`. With a `Train` mode the gradients differentiate the
/// dropout-masked network for that seed.
pub fn backward<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    batch: &[Vec<u32>],
    targets: &[Vec<u32>],
    mode: ForwardMode,
) -> Result<(f64, TransformerParams<S>), ModelError> {
    let (logits, cache) = forward_with_cache(params, config, batch, mode)?;
    let tflat = flatten_targets(targets, cache.b, cache.t, config.vocab_size)?;
    let loss = mean_cross_entropy(&logits, &tflat);

    let n = cache.b * cache.t;
    let vocab = config.vocab_size;
    let ninv = S::from_f64(1.0 / n as f64);

    // d loss / d logits = (softmax - onehot) / n
    let mut dlogits: Array2<S> = Array2::zeros((n, vocab));
    for (r, row) in logits.outer_iter().enumerate() {
        let mut maxv = S::neg_infinity();
        for &x in row.iter() {
            maxv = maxv.max(x);
        }
        let mut sum = S::zero();
        for &x in row.iter() {
            sum += (x - maxv).exp();
        }
        let sinv = sum.recip();
        for (c, &x) in row.iter().enumerate() {
            dlogits[[r, c]] = (x - maxv).exp() * sinv * ninv;
        }
        dlogits[[r, tflat[r] as usize]] -= ninv;
    }

    let mut g = params.zeros_like();

    // output head (tied): logits = xf . tok_emb^T
    g.tok_emb = dlogits.t().dot(&cache.xf);
    let dxf = dlogits.dot(&params.tok_emb);
    let (mut dx, dgf, dbf) = layer_norm_backward(&dxf, &cache.lnf, &params.lnf_gain);
    g.lnf_gain = dgf;
    g.lnf_bias = dbf;

    for li in (0..params.layers.len()).rev() {
        let lp = &params.layers[li];
        let lc = &cache.layers[li];
        let gl = &mut g.layers[li];

        // FFN block: x_out = x_mid + mask (.) (gelu(ln2(x_mid) . w1 + b1) . w2 + b2)
        let dy2 = match &lc.ffn_resid_mask {
            Some(m) => &dx * m,
            None => dx.clone(),
        };
        gl.w2 = lc.g.t().dot(&dy2);
        gl.b2 = colsum(&dy2);
        let mut dh1 = dy2.dot(&lp.w2.t());
        dh1.zip_mut_with(&lc.h1, |dg, &h| *dg *= gelu_grad(h));
        gl.w1 = lc.b2.t().dot(&dh1);
        gl.b1 = colsum(&dh1);
        let db2 = dh1.dot(&lp.w1.t());
        let (dxmid_ln, dg2, dbias2) = layer_norm_backward(&db2, &lc.ln2, &lp.ln2_gain);
        gl.ln2_gain = dg2;
        gl.ln2_bias = dbias2;
        let dxmid = &dx + &dxmid_ln;

        // attention block: x_mid = x_in + mask (.) (heads(ln1(x_in)) . wo + bo)
        let dy1 = match &lc.attn_resid_mask {
            Some(m) => &dxmid * m,
            None => dxmid.clone(),
        };
        gl.wo = lc.o.t().dot(&dy1);
        gl.bo = colsum(&dy1);
        let do_ = dy1.dot(&lp.wo.t());
        let (dq, dk, dv) = attention_backward(&do_, lc, cache.b, cache.t, config);
        gl.wq = lc.a.t().dot(&dq);
        gl.bq = colsum(&dq);
        gl.wk = lc.a.t().dot(&dk);
        gl.bk = colsum(&dk);
        gl.wv = lc.a.t().dot(&dv);
        gl.bv = colsum(&dv);
        let da = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        let (dx_ln, dg1, dbias1) = layer_norm_backward(&da, &lc.ln1, &lp.ln1_gain);
        gl.ln1_gain = dg1;
        gl.ln1_bias = dbias1;
        dx = &dxmid + &dx_ln;
    }

    // embeddings; the token embedding gradient adds to the head term above
    let dx0 = match &cache.emb_mask {
        Some(m) => &dx * m,
        None => dx,
    };
    for bi in 0..cache.b {
        for ti in 0..cache.t {
            let r = bi * cache.t + ti;
            let id = cache.ids[r] as usize;
            let src = dx0.row(r);
            let mut trow = g.tok_emb.row_mut(id);
            trow += &src;
            let mut prow = g.pos_emb.row_mut(ti);
            prow += &src;
        }
    }

    Ok((loss, g))
}

fn attention_backward<S: Scalar>(
    do_: &Array2<S>,
    lc: &LayerCache<S>,
    b: usize,
    t: usize,
    config: &ModelConfig,
) -> (Array2<S>, Array2<S>, Array2<S>) {
    let n_heads = config.n_heads;
    let head_dim = config.head_dim;
    let scale = S::from_f64(1.0 / (head_dim as f64).sqrt());

    let results: Vec<(Array2<S>, Array2<S>, Array2<S>)> = (0..b * n_heads)
        .into_par_iter()
        .map(|bh| {
            let bi = bh / n_heads;
            let h = bh % n_heads;
            let block = s![bi * t..(bi + 1) * t, h * head_dim..(h + 1) * head_dim];
            let qb = lc.q.slice(block);
            let kb = lc.k.slice(block);
            let vb = lc.v.slice(block);
            let dob = do_.slice(block);
            let p = &lc.probs[bh];
            let mask = lc.attn_drop.as_ref().map(|ms| &ms[bh]);

            let pd = match mask {
                Some(m) => p * m,
                None => p.clone(),
            };
            let dvb = pd.t().dot(&dob);
            let dpd = dob.dot(&vb.t());
            let dp = match mask {
                Some(m) => &dpd * m,
                None => dpd,
            };
            // softmax backward per causal row, then score scaling
            let mut dscores: Array2<S> = Array2::zeros((t, t));
            for i in 0..t {
                let mut dot = S::zero();
                for j in 0..=i {
                    dot += dp[[i, j]] * p[[i, j]];
                }
                for j in 0..=i {
                    dscores[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                }
            }
            let dqb = dscores.dot(&kb);
            let dkb = dscores.t().dot(&qb);
            (dqb, dkb, dvb)
        })
        .collect();

    let d = n_heads * head_dim;
    let mut dq = Array2::zeros((b * t, d));
    let mut dk = Array2::zeros((b * t, d));
    let mut dv = Array2::zeros((b * t, d));
    for (bh, (dqb, dkb, dvb)) in results.into_iter().enumerate() {
        let bi = bh / n_heads;
        let h = bh % n_heads;
        let block = s![bi * t..(bi + 1) * t, h * head_dim..(h + 1) * head_dim];
        dq.slice_mut(block).assign(&dqb);
        dk.slice_mut(block).assign(&dkb);
        dv.slice_mut(block).assign(&dvb);
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            head_dim: 4,
            vocab_size: 11,
            max_seq_len: 6,
            dropout: 0.0,
            attention_dropout: 0.0,
            layer_norm_eps: 1e-5,
        }
    }

    #[test]
    fn gradients_cover_every_tensor_and_are_finite() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 4);
        let batch = vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8]];
        let targets = vec![vec![2, 3, 4, 5], vec![6, 7, 8, 9]];
        let (loss, g) = backward(&p, &cfg, &batch, &targets, ForwardMode::Eval).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        for (name, tensor) in g.named_tensors() {
            assert!(tensor.iter().all(|x| x.is_finite()), "{name} has non-finite entries");
            let norm: f64 = tensor.iter().map(|x| x * x).sum();
            if name.ends_with(".bk") {
                // a key bias shifts every score in a row by the same amount,
                // which softmax ignores, so its exact gradient is zero
                assert!(norm < 1e-20, "{name} gradient should vanish, norm {norm}");
            } else {
                assert!(norm > 0.0, "{name} gradient is identically zero");
            }
        }
    }

    #[test]
    fn tied_embedding_grad_includes_head_term_for_unseen_tokens() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 4);
        // token 10 never appears in the batch, but the output head still
        // produces gradient for its embedding row
        let batch = vec![vec![1, 2, 3]];
        let targets = vec![vec![2, 3, 1]];
        let (_, g) = backward(&p, &cfg, &batch, &targets, ForwardMode::Eval).unwrap();
        let row_norm: f64 = g.tok_emb.row(10).iter().map(|x| x * x).sum();
        assert!(row_norm > 0.0);
    }

    #[test]
    fn backward_rejects_mismatched_targets() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 4);
        let batch = vec![vec![1, 2, 3]];
        let err =
            backward(&p, &cfg, &batch, &[vec![1, 2]], ForwardMode::Eval).unwrap_err();
        assert!(matches!(err, ModelError::TargetShapeMismatch { .. }));
        let err =
            backward(&p, &cfg, &batch, &[vec![1, 2, 99]], ForwardMode::Eval).unwrap_err();
        assert!(matches!(err, ModelError::TokenOutOfRange { id: 99, .. }));
    }

    #[test]
    fn backward_is_deterministic() {
        let cfg = ModelConfig { dropout: 0.1, attention_dropout: 0.1, ..tiny() };
        let p = TransformerParams::<f64>::init(&cfg, 4);
        let batch = vec![vec![1, 2, 3, 4]];
        let targets = vec![vec![2, 3, 4, 5]];
        let mode = ForwardMode::Train { dropout_seed: 77 };
        let (l1, g1) = backward(&p, &cfg, &batch, &targets, mode).unwrap();
        let (l2, g2) = backward(&p, &cfg, &batch, &targets, mode).unwrap();
        assert_eq!(l1, l2);
        for ((n1, t1), (_, t2)) in g1.named_tensors().iter().zip(g2.named_tensors().iter()) {
            assert_eq!(t1, t2, "{n1} differs between identical runs");
        }
    }
}
