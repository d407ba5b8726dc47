//! Distance-gated fusion of original and enhanced logits, the plausibility constraint and
//! token sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::softmax_f64;
use crate::te_branch::LogitsPair;

/// Logit value used for tokens removed by the plausibility constraint.
///
/// The most negative finite `f32` keeps softmax free of NaN while giving exactly zero probability.
pub const MASKED_LOGIT: f32 = f32::MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Weight of the enhanced logits in the collaborative branch.
    pub alpha1: f32,
    /// Contrast strength in the contrastive branch.
    pub alpha2: f32,
    /// Distance threshold separating the two branches.
    pub gamma: f32,
    /// Plausibility truncation.
    pub beta: f32,
    pub temperature: f32,
    pub sampling: SamplingMode,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            alpha1: 3.0,
            alpha2: 1.0,
            gamma: 0.2,
            beta: 0.1,
            temperature: 1.0,
            sampling: SamplingMode::Sample,
            seed: 0,
        }
    }
}

impl DecodeParams {
    /// Preset with the wider distance threshold.
    pub fn instructblip_style() -> Self {
        Self { gamma: 0.4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::InvalidParam("alpha1 and alpha2 must be non-negative".into()));
        }
        if !(0.0..=2.0).contains(&self.gamma) {
            return Err(Error::InvalidParam(format!("gamma {} outside [0, 2]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParam(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Collaborative,
    Contrastive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub logits: Vec<f32>,
    pub branch: Branch,
    pub distance: f64,
}

/// L1 distance between two probability vectors.
pub fn manhattan_distance<P: Copy + Into<f64>>(p: &[P], q: &[P]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(p.iter().zip(q).map(|(&a, &b)| (a.into() - b.into()).abs()).sum())
}

/// Fuses the pair collaboratively when their distributions are closer than `gamma`,
/// contrastively otherwise.
pub fn fuse_logits(pair: &LogitsPair, params: &DecodeParams) -> Result<Fused> {
    let p = softmax_f64(&pair.original);
    let q = softmax_f64(&pair.enhanced);
    let distance = manhattan_distance(&p, &q)?;
    let branch = if distance < params.gamma as f64 {
        Branch::Collaborative
    } else {
        Branch::Contrastive
    };
    let logits = match branch {
        Branch::Collaborative => pair
            .original
            .iter()
            .zip(&pair.enhanced)
            .map(|(&f, &e)| f + params.alpha1 * e)
            .collect(),
        Branch::Contrastive => pair
            .original
            .iter()
            .zip(&pair.enhanced)
            .map(|(&f, &e)| (1.0 + params.alpha2) * f - params.alpha2 * e)
            .collect(),
    };
    Ok(Fused { logits, branch, distance })
}

/// Masks every token whose reference probability is below `beta` times the largest one.
/// Returns the masked logits and the number of masked tokens.
pub fn plausibility_mask(logits: &[f32], reference_probs: &[f64], beta: f32) -> (Vec<f32>, usize) {
    let max = reference_probs.iter().copied().fold(0.0f64, f64::max);
    let threshold = beta as f64 * max;
    let mut n_masked = 0;
    let out = logits
        .iter()
        .zip(reference_probs)
        .map(|(&l, &p)| {
            if p < threshold {
                n_masked += 1;
                MASKED_LOGIT
            } else {
                l
            }
        })
        .collect();
    (out, n_masked)
}

fn is_masked(v: f32) -> bool {
    v == MASKED_LOGIT || v.is_nan() || v == f32::NEG_INFINITY
}

/// Greedy argmax (lowest id on ties) or a draw from `softmax(logits / temperature)`.
pub fn sample_token<R: Rng + ?Sized>(
    logits: &[f32],
    params: &DecodeParams,
    rng: &mut R,
) -> Result<u32> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in logits.iter().enumerate() {
        if is_masked(v) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    let (argmax, max) = best.ok_or(Error::AllMasked)?;
    if params.sampling == SamplingMode::Greedy {
        return Ok(argmax as u32);
    }

    let inv_t = 1.0 / params.temperature as f64;
    let weights: Vec<f64> = logits
        .iter()
        .map(|&v| if is_masked(v) { 0.0 } else { ((v as f64 - max as f64) * inv_t).exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_live = argmax;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        acc += w;
        last_live = i;
        if u < acc {
            return Ok(i as u32);
        }
    }
    Ok(last_live as u32)
}
