use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Half-width of the uniform distribution used for seeded initialization.
pub const INIT_RANGE: f32 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Vec<f32>,
    pub w_up: Matrix,
    pub b_up: Vec<f32>,
    pub w_down: Matrix,
    pub b_down: Vec<f32>,
}

/// All learned parameters. Nothing in the crate mutates a loaded instance; share it behind `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    /// Output projection, `[d_model x vocab_size]`.
    pub head: Matrix,
}

/// Where weights come from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    File(std::path::PathBuf),
    Seed(u64),
}

/// Names of every tensor in serialization order.
pub fn tensor_order(config: &ModelConfig) -> Vec<String> {
    let mut names = vec!["token_embedding".to_string(), "position_embedding".to_string()];
    for l in 0..config.n_layers {
        for t in [
            "attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_up", "b_up", "w_down", "b_down",
        ] {
            names.push(format!("layers.{l}.{t}"));
        }
    }
    names.push("head".to_string());
    names
}

/// Shape of a named tensor, `[rows, cols]` for matrices and `[len]` for vectors.
pub fn tensor_shape(config: &ModelConfig, name: &str) -> Option<Vec<usize>> {
    let d = config.d_model;
    match name {
        "token_embedding" => return Some(vec![config.vocab_size, d]),
        "position_embedding" => return Some(vec![config.max_seq_len, d]),
        "head" => return Some(vec![d, config.vocab_size]),
        _ => {}
    }
    let rest = name.strip_prefix("layers.")?;
    let (idx, field) = rest.split_once('.')?;
    let l: usize = idx.parse().ok()?;
    if l >= config.n_layers {
        return None;
    }
    Some(match field {
        "attn_norm" | "mlp_norm" | "b_down" => vec![d],
        "wq" | "wk" | "wv" | "wo" => vec![d, d],
        "w_up" => vec![d, config.d_mlp],
        "b_up" => vec![config.d_mlp],
        "w_down" => vec![config.d_mlp, d],
        _ => return None,
    })
}

fn is_norm_gain(name: &str) -> bool {
    name.ends_with("attn_norm") || name.ends_with("mlp_norm")
}

impl ModelWeights {
    /// Every tensor filled with zeros (norm gains included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Self::from_flat(config.clone(), |_, len| vec![0.0; len])
    }

    /// Deterministic initialization: every matrix and bias entry is drawn uniformly from
    /// `[-INIT_RANGE, INIT_RANGE]` in tensor order from a ChaCha8 stream seeded with `seed`.
    /// Normalization gains start at 1.
    pub fn init_seeded(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_flat(config.clone(), |name, len| {
            if is_norm_gain(name) {
                vec![1.0; len]
            } else {
                (0..len).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect()
            }
        })
    }

    /// Assembles weights by asking `fill` for each tensor, in tensor order.
    pub(crate) fn from_flat(
        config: ModelConfig,
        mut fill: impl FnMut(&str, usize) -> Vec<f32>,
    ) -> Result<Self> {
        let mut take = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            let shape = tensor_shape(&config, name)
                .ok_or_else(|| Error::Malformed(format!("unknown tensor {name}")))?;
            let len: usize = shape.iter().product();
            let data = fill(name, len);
            if data.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {name}: expected {len} values, got {}",
                    data.len()
                )));
            }
            Ok((shape, data))
        };
        let mat = |(shape, data): (Vec<usize>, Vec<f32>)| Matrix::from_vec(shape[0], shape[1], data);

        let token_embedding = mat(take("token_embedding")?);
        let position_embedding = mat(take("position_embedding")?);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |t: &str| format!("layers.{l}.{t}");
            layers.push(LayerWeights {
                attn_norm: take(&p("attn_norm"))?.1,
                wq: mat(take(&p("wq"))?),
                wk: mat(take(&p("wk"))?),
                wv: mat(take(&p("wv"))?),
                wo: mat(take(&p("wo"))?),
                mlp_norm: take(&p("mlp_norm"))?.1,
                w_up: mat(take(&p("w_up"))?),
                b_up: take(&p("b_up"))?.1,
                w_down: mat(take(&p("w_down"))?),
                b_down: take(&p("b_down"))?.1,
            });
        }
        let head = mat(take("head")?);
        Ok(Self { config, token_embedding, position_embedding, layers, head })
    }

    /// Tensors as flat slices, in serialization order.
    pub fn tensors(&self) -> Vec<(String, &[f32])> {
        let mut out: Vec<(String, &[f32])> = vec![
            ("token_embedding".into(), &self.token_embedding.data),
            ("position_embedding".into(), &self.position_embedding.data),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |t: &str| format!("layers.{l}.{t}");
            out.push((p("attn_norm"), &layer.attn_norm));
            out.push((p("wq"), &layer.wq.data));
            out.push((p("wk"), &layer.wk.data));
            out.push((p("wv"), &layer.wv.data));
            out.push((p("wo"), &layer.wo.data));
            out.push((p("mlp_norm"), &layer.mlp_norm));
            out.push((p("w_up"), &layer.w_up.data));
            out.push((p("b_up"), &layer.b_up));
            out.push((p("w_down"), &layer.w_down.data));
            out.push((p("b_down"), &layer.b_down));
        }
        out.push(("head".into(), &self.head.data));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Token embedding row for `id`.
    pub fn embed_token(&self, id: u32) -> Result<&[f32]> {
        if id as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange { id, vocab: self.config.vocab_size });
        }
        Ok(self.token_embedding.row(id as usize))
    }
}

/// Loads weights from a model file (checking its header against `config`) or draws them from a seed.
pub fn load_or_init_model(config: &ModelConfig, source: &ModelSource) -> Result<ModelWeights> {
    config.validate()?;
    match source {
        ModelSource::Seed(seed) => ModelWeights::init_seeded(config, *seed),
        ModelSource::File(path) => {
            let weights = crate::format::read_model(path)?;
            if !weights.config.same_shape(config) {
                return Err(Error::DimensionMismatch(format!(
                    "file header {:?} does not match requested config {:?}",
                    weights.config, config
                )));
            }
            Ok(weights)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig::new(2, 2, 8, 16, 11, 12)
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = ModelWeights::init_seeded(&small(), 42).unwrap();
        let b = ModelWeights::init_seeded(&small(), 42).unwrap();
        for ((_, x), (_, y)) in a.tensors().iter().zip(b.tensors().iter()) {
            assert_eq!(
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let c = ModelWeights::init_seeded(&small(), 43).unwrap();
        assert_ne!(a.head, c.head);
    }

    #[test]
    fn init_values_in_range() {
        let w = ModelWeights::init_seeded(&small(), 1).unwrap();
        for (name, t) in w.tensors() {
            if is_norm_gain(&name) {
                assert!(t.iter().all(|&v| v == 1.0));
            } else {
                assert!(t.iter().all(|v| v.abs() <= INIT_RANGE), "{name}");
            }
        }
    }

    #[test]
    fn tensor_order_matches_tensors() {
        let cfg = small();
        let w = ModelWeights::zeros(&cfg).unwrap();
        let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, tensor_order(&cfg));
        assert_eq!(w.param_count(), cfg.param_count());
    }

    #[test]
    fn embed_rejects_out_of_vocab() {
        let w = ModelWeights::zeros(&small()).unwrap();
        assert!(w.embed_token(10).is_ok());
        assert!(matches!(w.embed_token(11), Err(Error::TokenOutOfRange { .. })));
    }
}
