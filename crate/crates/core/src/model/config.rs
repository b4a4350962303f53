use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters. The default is the desk-scale model; the
/// dimensions used in the original bilingual runs are available through
/// [`ModelConfig::reference_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            head_dim: 16,
            vocab_size: 512,
            max_seq_len: 64,
            dropout: 0.1,
            attention_dropout: 0.1,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// The 124M-parameter configuration the original experiments ran at.
    pub fn reference_scale() -> Self {
        ModelConfig {
            n_layers: 12,
            d_model: 768,
            d_ff: 3072,
            n_heads: 12,
            head_dim: 64,
            vocab_size: 50_004,
            max_seq_len: 128,
            dropout: 0.1,
            attention_dropout: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &str, reason: String| ModelError::InvalidConfig {
            field: field.into(),
            reason,
        };
        for (field, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(bad(field, "must be positive".into()));
            }
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(bad(
                "head_dim",
                format!(
                    "n_heads * head_dim must equal d_model ({} * {} != {})",
                    self.n_heads, self.head_dim, self.d_model
                ),
            ));
        }
        for (field, p) in [("dropout", self.dropout), ("attention_dropout", self.attention_dropout)]
        {
            if !(0.0..1.0).contains(&p) {
                return Err(bad(field, format!("must lie in [0, 1), got {p}")));
            }
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return Err(bad("layer_norm_eps", format!("must be positive, got {}", self.layer_norm_eps)));
        }
        Ok(())
    }
}
