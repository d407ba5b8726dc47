//! Two-pass contrastive baselines: distorted-visual contrast and visual-free contrast.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adaptive::DecodeParams;
use crate::decode::{decode, DecodeOutput, DecodeRequest, Method};
use crate::error::{Error, Result};
use crate::layout::{Modality, TokenLayout};
use crate::prompt::Prompt;
use crate::weights::ModelWeights;

pub const VCD_DEFAULT_ALPHA: f32 = 1.0;
pub const VCD_DEFAULT_STEPS: usize = 500;
pub const VCD_DEFAULT_NOISE: f32 = 1.0;
pub const M3ID_DEFAULT_LAMBDA: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BaselineKind {
    Regular,
    Vcd { alpha: f32, noise_std: f32, steps: usize },
    M3id { lambda: f32 },
}

impl BaselineKind {
    pub fn vcd() -> Self {
        Self::Vcd { alpha: VCD_DEFAULT_ALPHA, noise_std: VCD_DEFAULT_NOISE, steps: VCD_DEFAULT_STEPS }
    }

    pub fn m3id() -> Self {
        Self::M3id { lambda: M3ID_DEFAULT_LAMBDA }
    }
}

/// `(1 + alpha) * original - alpha * distorted`
pub fn vcd_fuse(original: &[f32], distorted: &[f32], alpha: f32) -> Result<Vec<f32>> {
    if original.len() != distorted.len() {
        return Err(Error::LengthMismatch { left: original.len(), right: distorted.len() });
    }
    Ok(original.iter().zip(distorted).map(|(&f, &g)| (1.0 + alpha) * f - alpha * g).collect())
}

/// `(1 - e^{-lambda t}) / e^{-lambda t}`, i.e. `e^{lambda t} - 1`.
pub fn m3id_coefficient(lambda: f32, step: usize) -> f64 {
    (lambda as f64 * step as f64).exp_m1()
}

/// `conditioned + c * (conditioned - unconditioned)` with `c = m3id_coefficient(lambda, step)`.
pub fn m3id_fuse(
    conditioned: &[f32],
    unconditioned: &[f32],
    lambda: f32,
    step: usize,
) -> Result<Vec<f32>> {
    if conditioned.len() != unconditioned.len() {
        return Err(Error::LengthMismatch { left: conditioned.len(), right: unconditioned.len() });
    }
    let c = m3id_coefficient(lambda, step) as f32;
    Ok(conditioned.iter().zip(unconditioned).map(|(&f, &u)| f + c * (f - u)).collect())
}

/// Adds `steps` rounds of Gaussian noise with std `noise_std / sqrt(steps)` to every visual
/// embedding, so the accumulated perturbation has variance `noise_std^2`. Textual rows are
/// returned untouched.
pub fn distort_visual<R: Rng + ?Sized>(
    embeddings: &[Vec<f32>],
    layout: &TokenLayout,
    noise_std: f32,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f32>>> {
    if steps == 0 {
        return Err(Error::InvalidParam("distortion needs at least one step".into()));
    }
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(Error::InvalidParam(format!("noise_std must be non-negative, got {noise_std}")));
    }
    let mut out = embeddings.to_vec();
    if noise_std == 0.0 {
        return Ok(out);
    }
    let step_std = noise_std / (steps as f32).sqrt();
    let normal = Normal::new(0.0f32, step_std).map_err(|e| Error::InvalidParam(e.to_string()))?;
    for (pos, row) in out.iter_mut().enumerate() {
        if layout.modality(pos)? != Modality::Visual {
            continue;
        }
        for x in row.iter_mut() {
            let mut acc = 0.0f32;
            for _ in 0..steps {
                acc += normal.sample(rng);
            }
            *x += acc;
        }
    }
    Ok(out)
}

/// Runs regular decoding or one of the two-pass baselines.
pub fn run_baseline(
    kind: BaselineKind,
    weights: &ModelWeights,
    prompt: &Prompt,
    params: &DecodeParams,
    max_tokens: usize,
) -> Result<DecodeOutput> {
    let method = match kind {
        BaselineKind::Regular => Method::Regular,
        BaselineKind::Vcd { alpha, noise_std, steps } => Method::Vcd { alpha, noise_std, steps },
        BaselineKind::M3id { lambda } => Method::M3id { lambda },
    };
    decode(weights, prompt, &DecodeRequest::new(method, *params, max_tokens))
}
