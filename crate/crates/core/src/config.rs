use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Layer whose attention output is re-derived for the textual-enhancement branch.
    pub te_layer: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Builds a config with `d_head` derived from `d_model / n_heads`.
    pub fn new(
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        d_mlp: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_head: d_model.checked_div(n_heads).unwrap_or(0),
            d_mlp,
            vocab_size,
            max_seq_len,
            te_layer: 0,
            rng_seed: 0,
        }
    }

    /// Desk-scale configuration used by the benchmark and acceptance runs.
    pub fn reference() -> Self {
        Self {
            rng_seed: 7,
            ..Self::new(8, 8, 256, 1024, 1024, 1024)
        }
    }

    pub fn with_te_layer(mut self, layer: usize) -> Self {
        self.te_layer = layer;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "d_model ({}) must equal n_heads ({}) * d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.te_layer >= self.n_layers {
            return Err(Error::InvalidConfig(format!(
                "te_layer {} out of range for {} layers",
                self.te_layer, self.n_layers
            )));
        }
        Ok(())
    }

    /// True when every shape-determining field matches; `te_layer` and `rng_seed` are ignored.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_layers == other.n_layers
            && self.n_heads == other.n_heads
            && self.d_model == other.d_model
            && self.d_head == other.d_head
            && self.d_mlp == other.d_mlp
            && self.vocab_size == other.vocab_size
            && self.max_seq_len == other.max_seq_len
    }

    pub fn layer_param_count(&self) -> usize {
        let d = self.d_model;
        4 * d * d + 2 * d + 2 * d * self.d_mlp + self.d_mlp + d
    }

    /// Total number of scalar weights, matching the serialized blob length in floats.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        self.vocab_size * d
            + self.max_seq_len * d
            + self.n_layers * self.layer_param_count()
            + d * self.vocab_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_valid() {
        let cfg = ModelConfig::reference();
        cfg.validate().unwrap();
        assert_eq!(cfg.d_head, 32);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = ModelConfig::new(2, 3, 8, 16, 10, 8);
        cfg.d_head = 3;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_te_layer_out_of_range() {
        let cfg = ModelConfig::new(2, 2, 8, 16, 10, 8).with_te_layer(2);
        assert!(cfg.validate().is_err());
        ModelConfig::new(2, 2, 8, 16, 10, 8).with_te_layer(1).validate().unwrap();
    }
}
