//! Pre-norm decoder-only transformer with an incremental KV cache.
//!
//! Each call to [`forward_step`] processes one new position and exposes everything the
//! intervention code needs: per-layer input hidden states, every attention probability row,
//! the per-head weighted values and the projected attention output of every layer.

use crate::error::{Error, Result};
use crate::layout::TokenLayout;
use crate::linalg::{add_into, dot, gelu, rms_norm, Matrix};
use crate::weights::{LayerWeights, ModelWeights};

/// Whether later positions may attend to a position.
///
/// `Hidden` positions still attend (to visible positions and themselves) but are skipped as keys
/// by every other query, which removes their content from the rest of the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Visible,
    Hidden,
}

#[derive(Debug, Clone)]
pub struct KVCache {
    d_model: usize,
    max_len: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    hidden: Vec<bool>,
}

impl KVCache {
    pub fn new(weights: &ModelWeights) -> Self {
        let cfg = &weights.config;
        let cap = cfg.max_seq_len * cfg.d_model;
        Self {
            d_model: cfg.d_model,
            max_len: cfg.max_seq_len,
            keys: (0..cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            hidden: Vec::with_capacity(cfg.max_seq_len),
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.max_len
    }

    /// Cached keys of one layer, `len() x d_model` row-major.
    pub fn keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    /// Cached values of one layer, `len() x d_model` row-major.
    pub fn values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    pub fn is_hidden(&self, pos: usize) -> bool {
        self.hidden[pos]
    }

    /// Key rows cached in a layer; equals `len()` between steps.
    pub fn rows_in_layer(&self, layer: usize) -> (usize, usize) {
        (self.keys[layer].len() / self.d_model, self.values[layer].len() / self.d_model)
    }
}

/// Attention probability rows of the newest position, for every layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSnapshot {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of key positions per row.
    pub len: usize,
    data: Vec<f32>,
}

impl AttentionSnapshot {
    pub fn new(n_layers: usize, n_heads: usize, len: usize) -> Self {
        Self { n_layers, n_heads, len, data: vec![0.0; n_layers * n_heads * len] }
    }

    /// Builds a single-layer snapshot from explicit rows (used by tests and bindings).
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * len);
        for r in rows {
            if r.len() != len {
                return Err(Error::LengthMismatch { left: len, right: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n_layers: 1, n_heads: rows.len(), len, data })
    }

    pub fn row(&self, layer: usize, head: usize) -> &[f32] {
        let start = (layer * self.n_heads + head) * self.len;
        &self.data[start..start + self.len]
    }

    fn row_mut(&mut self, layer: usize, head: usize) -> &mut [f32] {
        let start = (layer * self.n_heads + head) * self.len;
        &mut self.data[start..start + self.len]
    }

    pub fn layer_rows(&self, layer: usize) -> Vec<&[f32]> {
        (0..self.n_heads).map(|h| self.row(layer, h)).collect()
    }
}

/// Everything produced while processing one position.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f32>,
    /// Input hidden state of every layer plus the final output: `n_layers + 1` vectors.
    pub hidden_states: Vec<Vec<f32>>,
    pub attention: AttentionSnapshot,
    /// Per layer, the concatenated per-head weighted values (`d_model`, head-major).
    pub head_outputs: Vec<Vec<f32>>,
    /// Per layer, the attention output after the output projection.
    pub mha_outputs: Vec<Vec<f32>>,
}

impl StepOutput {
    /// Per-head weighted value vectors at `layer`, each of length `d_head`.
    pub fn head_vectors(&self, layer: usize, d_head: usize) -> Vec<&[f32]> {
        self.head_outputs[layer].chunks_exact(d_head).collect()
    }

    pub fn final_hidden(&self) -> &[f32] {
        self.hidden_states.last().expect("at least one hidden state")
    }
}

/// Processes one new position at `cache.len()`, appending its keys and values to the cache.
pub fn forward_step(
    weights: &ModelWeights,
    cache: &mut KVCache,
    embedding: &[f32],
) -> Result<StepOutput> {
    forward_step_with(weights, cache, embedding, Visibility::Visible)
}

pub fn forward_step_with(
    weights: &ModelWeights,
    cache: &mut KVCache,
    embedding: &[f32],
    visibility: Visibility,
) -> Result<StepOutput> {
    let cfg = &weights.config;
    let pos = cache.len();
    if pos >= cfg.max_seq_len {
        return Err(Error::CacheOverflow { len: pos, max: cfg.max_seq_len });
    }
    if embedding.len() != cfg.d_model {
        return Err(Error::LengthMismatch { left: cfg.d_model, right: embedding.len() });
    }
    cache.hidden.push(visibility == Visibility::Hidden);
    let t = pos + 1;

    let mut h: Vec<f32> = embedding.to_vec();
    add_into(&mut h, weights.position_embedding.row(pos));

    let mut hidden_states = Vec::with_capacity(cfg.n_layers + 1);
    let mut attention = AttentionSnapshot::new(cfg.n_layers, cfg.n_heads, t);
    let mut head_outputs = Vec::with_capacity(cfg.n_layers);
    let mut mha_outputs = Vec::with_capacity(cfg.n_layers);

    for (l, layer) in weights.layers.iter().enumerate() {
        hidden_states.push(h.clone());
        let x = rms_norm(&h, &layer.attn_norm);
        let q = layer.wq.vecmat(&x);
        cache.keys[l].extend_from_slice(&layer.wk.vecmat(&x));
        cache.values[l].extend_from_slice(&layer.wv.vecmat(&x));

        let heads = attend(cfg.n_heads, cfg.d_head, &q, cache, l, &mut attention);
        let attn_out = layer.wo.vecmat(&heads);
        add_into(&mut h, &attn_out);
        let mlp = mlp_forward(layer, &h);
        add_into(&mut h, &mlp);

        head_outputs.push(heads);
        mha_outputs.push(attn_out);
    }
    let logits = weights.head.vecmat(&h);
    hidden_states.push(h);

    Ok(StepOutput { logits, hidden_states, attention, head_outputs, mha_outputs })
}

/// Causal attention of the newest query against every cached key of `layer`.
/// Writes probability rows into `snapshot` and returns the concatenated head outputs.
fn attend(
    n_heads: usize,
    d_head: usize,
    q: &[f32],
    cache: &KVCache,
    layer: usize,
    snapshot: &mut AttentionSnapshot,
) -> Vec<f32> {
    let d = n_heads * d_head;
    let t = cache.len();
    let me = t - 1;
    let keys = &cache.keys[layer];
    let values = &cache.values[layer];
    let scale = 1.0 / (d_head as f32).sqrt();
    let mut out = vec![0.0f32; d];

    for hd in 0..n_heads {
        let off = hd * d_head;
        let qh = &q[off..off + d_head];
        let row = snapshot.row_mut(layer, hd);
        let mut max = f32::NEG_INFINITY;
        for (j, s) in row.iter_mut().enumerate() {
            if j != me && cache.hidden[j] {
                *s = f32::NEG_INFINITY;
                continue;
            }
            let kj = &keys[j * d + off..j * d + off + d_head];
            *s = dot(qh, kj) * scale;
            max = max.max(*s);
        }
        let mut sum = 0.0f32;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let oh = &mut out[off..off + d_head];
        for (j, s) in row.iter_mut().enumerate() {
            *s /= sum;
            if *s == 0.0 {
                continue;
            }
            let vj = &values[j * d + off..j * d + off + d_head];
            for (o, v) in oh.iter_mut().zip(vj) {
                *o += *s * v;
            }
        }
    }
    out
}

/// `MLP(norm(h))` for one layer, without the residual.
pub fn mlp_forward(layer: &LayerWeights, h: &[f32]) -> Vec<f32> {
    let x = rms_norm(h, &layer.mlp_norm);
    let mut up = layer.w_up.vecmat(&x);
    for (u, b) in up.iter_mut().zip(&layer.b_up) {
        *u = gelu(*u + b);
    }
    let mut down = layer.w_down.vecmat(&up);
    add_into(&mut down, &layer.b_down);
    down
}

/// Runs the prompt position by position and returns the cache plus the last step's output.
pub fn prefill(
    weights: &ModelWeights,
    prompt_embeddings: &[Vec<f32>],
    layout: &TokenLayout,
) -> Result<(KVCache, StepOutput)> {
    if layout.len() < prompt_embeddings.len() {
        return Err(Error::UncoveredPosition(layout.len()));
    }
    prefill_with(weights, prompt_embeddings, &vec![Visibility::Visible; prompt_embeddings.len()])
}

/// Prefill with an explicit per-position visibility.
pub fn prefill_with(
    weights: &ModelWeights,
    prompt_embeddings: &[Vec<f32>],
    visibility: &[Visibility],
) -> Result<(KVCache, StepOutput)> {
    if prompt_embeddings.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    if prompt_embeddings.len() > weights.config.max_seq_len {
        return Err(Error::CacheOverflow {
            len: prompt_embeddings.len(),
            max: weights.config.max_seq_len,
        });
    }
    let mut cache = KVCache::new(weights);
    let mut last = None;
    for (e, v) in prompt_embeddings.iter().zip(visibility) {
        last = Some(forward_step_with(weights, &mut cache, e, *v)?);
    }
    Ok((cache, last.expect("non-empty prompt")))
}

/// Output projection applied to an arbitrary hidden vector.
pub fn project_logits(head: &Matrix, hidden: &[f32]) -> Vec<f32> {
    head.vecmat(hidden)
}
