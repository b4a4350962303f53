use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::rng::{derive_seed, seeded_rng};
use crate::Scalar;

/// Parameters of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S: Scalar> {
    pub ln1_gain: Array2<S>,
    pub ln1_bias: Array2<S>,
    pub wq: Array2<S>,
    pub bq: Array2<S>,
    pub wk: Array2<S>,
    pub bk: Array2<S>,
    pub wv: Array2<S>,
    pub bv: Array2<S>,
    pub wo: Array2<S>,
    pub bo: Array2<S>,
    pub ln2_gain: Array2<S>,
    pub ln2_bias: Array2<S>,
    pub w1: Array2<S>,
    pub b1: Array2<S>,
    pub w2: Array2<S>,
    pub b2: Array2<S>,
}

/// Full parameter set. There is no separate output projection: logits are
/// computed against `tok_emb`, so its gradient collects both the embedding
/// and the unembedding terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<S: Scalar> {
    pub tok_emb: Array2<S>,
    pub pos_emb: Array2<S>,
    pub layers: Vec<LayerParams<S>>,
    pub lnf_gain: Array2<S>,
    pub lnf_bias: Array2<S>,
}

fn sampled<S: Scalar>(rows: usize, cols: usize, std: f64, seed: u64) -> Array2<S> {
    let mut rng = seeded_rng(seed);
    let dist = Normal::new(0.0f64, std).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| S::from_f64(dist.sample(&mut rng)))
}

impl<S: Scalar> TransformerParams<S> {
    /// Fresh parameters: weights and embeddings N(0, 0.02^2), biases zero,
    /// layer norm gains one. Each tensor draws from its own stream derived
    /// from `seed` and the tensor name, in row-major order.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let d = config.d_model;
        let std = 0.02;
        let t = |name: &str| derive_seed(seed, &format!("init.{name}"));
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            layers.push(LayerParams {
                ln1_gain: Array2::ones((1, d)),
                ln1_bias: Array2::zeros((1, d)),
                wq: sampled(d, d, std, t(&format!("layer{i}.wq"))),
                bq: Array2::zeros((1, d)),
                wk: sampled(d, d, std, t(&format!("layer{i}.wk"))),
                bk: Array2::zeros((1, d)),
                wv: sampled(d, d, std, t(&format!("layer{i}.wv"))),
                bv: Array2::zeros((1, d)),
                wo: sampled(d, d, std, t(&format!("layer{i}.wo"))),
                bo: Array2::zeros((1, d)),
                ln2_gain: Array2::ones((1, d)),
                ln2_bias: Array2::zeros((1, d)),
                w1: sampled(d, config.d_ff, std, t(&format!("layer{i}.w1"))),
                b1: Array2::zeros((1, config.d_ff)),
                w2: sampled(config.d_ff, d, std, t(&format!("layer{i}.w2"))),
                b2: Array2::zeros((1, d)),
            });
        }
        TransformerParams {
            tok_emb: sampled(config.vocab_size, d, std, t("tok_emb")),
            pos_emb: sampled(config.max_seq_len, d, std, t("pos_emb")),
            layers,
            lnf_gain: Array2::ones((1, d)),
            lnf_bias: Array2::zeros((1, d)),
        }
    }

    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        TransformerParams {
            tok_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_seq_len, d)),
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    ln1_gain: Array2::zeros((1, d)),
                    ln1_bias: Array2::zeros((1, d)),
                    wq: Array2::zeros((d, d)),
                    bq: Array2::zeros((1, d)),
                    wk: Array2::zeros((d, d)),
                    bk: Array2::zeros((1, d)),
                    wv: Array2::zeros((d, d)),
                    bv: Array2::zeros((1, d)),
                    wo: Array2::zeros((d, d)),
                    bo: Array2::zeros((1, d)),
                    ln2_gain: Array2::zeros((1, d)),
                    ln2_bias: Array2::zeros((1, d)),
                    w1: Array2::zeros((d, config.d_ff)),
                    b1: Array2::zeros((1, config.d_ff)),
                    w2: Array2::zeros((config.d_ff, d)),
                    b2: Array2::zeros((1, d)),
                })
                .collect(),
            lnf_gain: Array2::zeros((1, d)),
            lnf_bias: Array2::zeros((1, d)),
        }
    }

    /// Tensors in a fixed, documented order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<S>)> {
        let mut out: Vec<(String, &Array2<S>)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, tensor) in l.named() {
                out.push((format!("layer{i}.{suffix}"), tensor));
            }
        }
        out.push(("lnf_gain".into(), &self.lnf_gain));
        out.push(("lnf_bias".into(), &self.lnf_bias));
        out
    }

    /// Mutable variant of [`Self::named_tensors`], same order and names.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<S>)> {
        let mut out: Vec<(String, &mut Array2<S>)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (suffix, tensor) in l.named_mut() {
                out.push((format!("layer{i}.{suffix}"), tensor));
            }
        }
        out.push(("lnf_gain".into(), &mut self.lnf_gain));
        out.push(("lnf_bias".into(), &mut self.lnf_bias));
        out
    }

    /// Same structure with every tensor zeroed, e.g. a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        self.map(|_| S::zero())
    }

    /// Elementwise map, optionally changing the scalar type.
    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T + Copy) -> TransformerParams<T> {
        let m = |a: &Array2<S>| a.mapv(f);
        TransformerParams {
            tok_emb: m(&self.tok_emb),
            pos_emb: m(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: m(&l.ln1_gain),
                    ln1_bias: m(&l.ln1_bias),
                    wq: m(&l.wq),
                    bq: m(&l.bq),
                    wk: m(&l.wk),
                    bk: m(&l.bk),
                    wv: m(&l.wv),
                    bv: m(&l.bv),
                    wo: m(&l.wo),
                    bo: m(&l.bo),
                    ln2_gain: m(&l.ln2_gain),
                    ln2_bias: m(&l.ln2_bias),
                    w1: m(&l.w1),
                    b1: m(&l.b1),
                    w2: m(&l.w2),
                    b2: m(&l.b2),
                })
                .collect(),
            lnf_gain: m(&self.lnf_gain),
            lnf_bias: m(&self.lnf_bias),
        }
    }

    /// Converts the scalar type through f64.
    pub fn convert<T: Scalar>(&self) -> TransformerParams<T> {
        self.map(|x| T::from_f64(x.to_f64()))
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl<S: Scalar> LayerParams<S> {
    fn named(&self) -> [(&'static str, &Array2<S>); 16] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Array2<S>); 16] {
        [
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
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
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny();
        let a = TransformerParams::<f32>::init(&cfg, 1);
        let b = TransformerParams::<f32>::init(&cfg, 1);
        let c = TransformerParams::<f32>::init(&cfg, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_constants() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 3);
        assert_eq!(p.tok_emb.dim(), (11, 8));
        assert_eq!(p.pos_emb.dim(), (6, 8));
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].w1.dim(), (8, 16));
        assert_eq!(p.layers[0].w2.dim(), (16, 8));
        assert!(p.lnf_gain.iter().all(|&x| x == 1.0));
        assert!(p.layers[1].bq.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn named_tensor_order_is_stable_and_complete() {
        let cfg = tiny();
        let p = TransformerParams::<f32>::init(&cfg, 3);
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "tok_emb");
        assert_eq!(names[1], "pos_emb");
        assert_eq!(names[2], "layer0.ln1_gain");
        assert_eq!(names.last().unwrap(), "lnf_bias");
        assert_eq!(names.len(), 2 + 2 * 16 + 2);
        let mut p2 = p.clone();
        let names2: Vec<String> = p2.named_tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names2);
    }

    #[test]
    fn param_count_matches_formula() {
        let cfg = tiny();
        let p = TransformerParams::<f32>::init(&cfg, 0);
        let d = 8;
        let per_layer = 2 * d + 4 * (d * d) + 4 * d + 2 * d + (d * 16 + 16) + (16 * d + d);
        let want = 11 * d + 6 * d + 2 * per_layer + 2 * d;
        assert_eq!(p.n_params(), want);
    }

    #[test]
    fn convert_round_trips_f64_params() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 5);
        let as_f32: TransformerParams<f32> = p.convert();
        let back: TransformerParams<f64> = as_f32.convert();
        for ((_, a), (_, b)) in p.named_tensors().iter().zip(back.named_tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }
}
