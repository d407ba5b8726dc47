//! One-layer textual-enhancement branch.
//!
//! The branch reuses the main pass's attention probabilities and cached values at the
//! intervention layer, so per token it costs one attention-output reconstruction, one MLP
//! evaluation and one extra output projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_into, Matrix};
use crate::model::{mlp_forward, project_logits, StepOutput};
use crate::weights::ModelWeights;

/// Which hidden state feeds the output head for the enhanced logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeHeadInput {
    /// `head(H_hat + H_final)`
    #[default]
    Alg1,
    /// `head(H_hat)`
    Eq17,
}

impl TeHeadInput {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Alg1 => "alg1",
            Self::Eq17 => "eq17",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsPair {
    pub original: Vec<f32>,
    pub enhanced: Vec<f32>,
}

/// Multiply-accumulate operations spent in the enhancement branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount(pub u64);

/// `Concat(a_1 V_1, ..., a_H V_H) W^O` for the newest position.
///
/// `values` holds the cached values of the intervention layer, `t x d_model` row-major, and
/// `rows` one (possibly modified) attention row of length `t` per head.
pub fn te_mha_output(
    rows: &[Vec<f32>],
    values: &[f32],
    wo: &Matrix,
    macs: &mut MacCount,
) -> Result<Vec<f32>> {
    let d = wo.rows;
    let n_heads = rows.len();
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::DimensionMismatch(format!("{n_heads} heads for d_model {d}")));
    }
    let d_head = d / n_heads;
    let t = values.len() / d;
    let mut concat = vec![0.0f32; d];
    for (hd, row) in rows.iter().enumerate() {
        if row.len() != t {
            return Err(Error::LengthMismatch { left: t, right: row.len() });
        }
        let off = hd * d_head;
        let out = &mut concat[off..off + d_head];
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let v = &values[j * d + off..j * d + off + d_head];
            for (o, x) in out.iter_mut().zip(v) {
                *o += a * x;
            }
        }
        macs.0 += (t * d_head) as u64;
    }
    macs.0 += (d * wo.cols) as u64;
    Ok(wo.vecmat(&concat))
}

/// Original and textual-enhanced logits for the current position.
///
/// `te_attention` is the enhanced attention output of the intervention layer. It is added to
/// the input of the last layer, passed through the last layer's (normalized) MLP with a
/// residual, and projected by the output head.
pub fn te_logits(
    step: &StepOutput,
    weights: &ModelWeights,
    te_attention: &[f32],
    mode: TeHeadInput,
    macs: &mut MacCount,
) -> Result<LogitsPair> {
    let cfg = &weights.config;
    let n_layers = cfg.n_layers;
    if step.hidden_states.len() != n_layers + 1 {
        return Err(Error::LengthMismatch { left: n_layers + 1, right: step.hidden_states.len() });
    }
    if te_attention.len() != cfg.d_model {
        return Err(Error::LengthMismatch { left: cfg.d_model, right: te_attention.len() });
    }
    let last = &weights.layers[n_layers - 1];

    let mut mixed = te_attention.to_vec();
    add_into(&mut mixed, &step.hidden_states[n_layers - 1]);
    let mut enhanced_hidden = mlp_forward(last, &mixed);
    add_into(&mut enhanced_hidden, &mixed);
    macs.0 += (2 * cfg.d_model * cfg.d_mlp) as u64;

    if mode == TeHeadInput::Alg1 {
        add_into(&mut enhanced_hidden, step.final_hidden());
    }
    let enhanced = project_logits(&weights.head, &enhanced_hidden);
    macs.0 += (cfg.d_model * cfg.vocab_size) as u64;

    Ok(LogitsPair { original: step.logits.clone(), enhanced })
}

/// Extra work per generated token relative to regular decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeAccount {
    pub extra_mha_evals: u64,
    pub extra_mlp_evals: u64,
    pub extra_full_forwards: u64,
}

/// One attention-output reconstruction and one MLP per token, no extra forward pass.
pub fn extra_compute_account(_config: &crate::config::ModelConfig) -> ComputeAccount {
    ComputeAccount { extra_mha_evals: 1, extra_mlp_evals: 1, extra_full_forwards: 0 }
}
