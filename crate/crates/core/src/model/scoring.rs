use ndarray::{Array2, ArrayView1};

use super::forward::{forward, ForwardMode};
use super::{ModelConfig, ModelError, TransformerParams};
use crate::corpus::SpecialIds;
use crate::Scalar;

/// log softmax(row)[idx], accumulated in f64 regardless of the model scalar.
pub(crate) fn log_softmax_at<S: Scalar>(row: ArrayView1<S>, idx: usize) -> f64 {
    let mut maxv = f64::NEG_INFINITY;
    for &x in row.iter() {
        maxv = maxv.max(x.to_f64());
    }
    let mut sum = 0.0f64;
    for &x in row.iter() {
        sum += (x.to_f64() - maxv).exp();
    }
    row[idx].to_f64() - maxv - sum.ln()
}

pub(crate) fn flatten_targets(
    targets: &[Vec<u32>],
    b: usize,
    t: usize,
    vocab_size: usize,
) -> Result<Vec<u32>, ModelError> {
    if targets.len() != b {
        return Err(ModelError::TargetShapeMismatch { got: targets.len(), expected: b });
    }
    let mut flat = Vec::with_capacity(b * t);
    for row in targets {
        if row.len() != t {
            return Err(ModelError::TargetShapeMismatch { got: row.len(), expected: t });
        }
        for &id in row {
            if id as usize >= vocab_size {
                return Err(ModelError::TokenOutOfRange { id, vocab_size });
            }
            flat.push(id);
        }
    }
    Ok(flat)
}

pub(crate) fn mean_cross_entropy<S: Scalar>(logits: &Array2<S>, targets_flat: &[u32]) -> f64 {
    let mut sum = 0.0f64;
    for (r, row) in logits.outer_iter().enumerate() {
        sum -= log_softmax_at(row, targets_flat[r] as usize);
    }
    sum / targets_flat.len() as f64
}

/// Mean next-token cross entropy in nats over a rectangular batch of logits
/// (rows = b * t) and same-shape targets.
pub fn loss<S: Scalar>(
    logits: &Array2<S>,
    targets: &[Vec<u32>],
    t: usize,
    vocab_size: usize,
) -> Result<f64, ModelError> {
    if t == 0 || logits.nrows() % t != 0 {
        return Err(ModelError::TargetShapeMismatch { got: logits.nrows(), expected: t.max(1) });
    }
    let b = logits.nrows() / t;
    let flat = flatten_targets(targets, b, t, vocab_size)?;
    Ok(mean_cross_entropy(logits, &flat))
}

/// Total log probability (nats, f64) of `continuation` given `context`,
/// scored in eval mode with the beginning-of-sequence token prepended. The
/// combined input `bos + context + continuation[..-1]` must fit within
/// `max_seq_len`.
pub fn sequence_logprob<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    context: &[u32],
    continuation: &[u32],
) -> Result<f64, ModelError> {
    if continuation.is_empty() {
        return Err(ModelError::EmptyContinuation);
    }
    let m = context.len();
    let n = continuation.len();
    if m + n > config.max_seq_len {
        return Err(ModelError::SequenceTooLong { got: m + n, max: config.max_seq_len });
    }
    let mut input = Vec::with_capacity(m + n);
    input.push(SpecialIds::standard().bos);
    input.extend_from_slice(context);
    input.extend_from_slice(&continuation[..n - 1]);
    let logits = forward(params, config, &[input], ForwardMode::Eval)?;
    let mut lp = 0.0f64;
    for (k, &tok) in continuation.iter().enumerate() {
        if tok as usize >= config.vocab_size {
            return Err(ModelError::TokenOutOfRange { id: tok, vocab_size: config.vocab_size });
        }
        lp += log_softmax_at(logits.row(m + k), tok as usize);
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            head_dim: 4,
            vocab_size: 11,
            max_seq_len: 8,
            dropout: 0.0,
            attention_dropout: 0.0,
            layer_norm_eps: 1e-5,
        }
    }

    #[test]
    fn cross_entropy_against_closed_form() {
        // CE([1,2,3] -> class 2) = ln(1 + e^-1 + e^-2)
        let logits = array![[1.0f64, 2.0, 3.0]];
        let got = mean_cross_entropy(&logits, &[2]);
        assert!((got - 0.407_605_964_44).abs() < 1e-8, "got {got}");
        // uniform two-class rows give exactly ln 2
        let logits = array![[0.5f64, 0.5], [-1.0, -1.0]];
        let got = mean_cross_entropy(&logits, &[0, 1]);
        assert!((got - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_validates_target_shape_and_range() {
        let logits = Array2::<f64>::zeros((4, 5));
        assert!(loss(&logits, &[vec![1, 2], vec![3, 4]], 2, 5).is_ok());
        assert!(matches!(
            loss(&logits, &[vec![1, 2]], 2, 5),
            Err(ModelError::TargetShapeMismatch { .. })
        ));
        assert!(matches!(
            loss(&logits, &[vec![1, 2], vec![3, 5]], 2, 5),
            Err(ModelError::TokenOutOfRange { id: 5, .. })
        ));
    }

    #[test]
    fn all_zero_params_give_exactly_uniform_loss() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 0).zeros_like();
        let batch = vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8]];
        let logits = forward(&p, &cfg, &batch, ForwardMode::Eval).unwrap();
        let targets = vec![vec![2, 3, 4, 5], vec![6, 7, 8, 9]];
        let got = loss(&logits, &targets, 4, cfg.vocab_size).unwrap();
        let want = (cfg.vocab_size as f64).ln();
        assert!((got - want).abs() < 1e-12, "got {got}, want ln(V) = {want}");
    }

    #[test]
    fn sequence_logprob_matches_per_token_log_softmax() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 6);
        let context = [3u32, 4];
        let continuation = [5u32, 6, 7];
        let lp = sequence_logprob(&p, &cfg, &context, &continuation).unwrap();

        let input = vec![0u32, 3, 4, 5, 6];
        let logits = forward(&p, &cfg, &[input], ForwardMode::Eval).unwrap();
        let want = log_softmax_at(logits.row(2), 5)
            + log_softmax_at(logits.row(3), 6)
            + log_softmax_at(logits.row(4), 7);
        assert!((lp - want).abs() < 1e-12);
        assert!(lp < 0.0);
    }

    #[test]
    fn sequence_logprob_is_additive_over_continuation_splits() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 7);
        let ctx = [1u32, 2];
        let full = [3u32, 4, 5, 6];
        let joint = sequence_logprob(&p, &cfg, &ctx, &full).unwrap();
        for split in 1..full.len() {
            let (head, tail) = full.split_at(split);
            let mut ctx2 = ctx.to_vec();
            ctx2.extend_from_slice(head);
            let sum = sequence_logprob(&p, &cfg, &ctx, head).unwrap()
                + sequence_logprob(&p, &cfg, &ctx2, tail).unwrap();
            assert!((joint - sum).abs() < 1e-9, "split {split}: {joint} vs {sum}");
        }
    }

    #[test]
    fn sequence_logprob_rejects_bad_inputs() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 7);
        assert!(matches!(
            sequence_logprob(&p, &cfg, &[1, 2], &[]),
            Err(ModelError::EmptyContinuation)
        ));
        // bos + context + continuation[..-1] is 9 tokens > max_seq_len 8
        assert!(matches!(
            sequence_logprob(&p, &cfg, &[1; 5], &[2; 4]),
            Err(ModelError::SequenceTooLong { got: 9, max: 8 })
        ));
        // m + n == max_seq_len is the longest admissible case
        assert!(sequence_logprob(&p, &cfg, &[1; 5], &[2; 3]).is_ok());
        assert!(matches!(
            sequence_logprob(&p, &cfg, &[1], &[99]),
            Err(ModelError::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn empty_context_scores_from_bos_alone() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 8);
        let lp = sequence_logprob(&p, &cfg, &[], &[4, 5]).unwrap();
        assert!(lp.is_finite() && lp < 0.0);
    }
}
