//! Text-to-visual entropy ratio head selection and the alternative enhancement strategies.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Modality, TokenLayout};
use crate::model::AttentionSnapshot;

/// How a subset of attention values is turned into a distribution before taking its entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    /// Softmax over the (already normalized) attention values.
    #[default]
    Resoftmax,
    /// Divide the values by their sum.
    Renormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TverReport {
    pub textual_entropy: Vec<f64>,
    pub visual_entropy: Vec<f64>,
    pub tver: Vec<f64>,
    pub layer_average: f64,
    pub keep_mask: Vec<bool>,
}

/// Default noise scale for [`EnhancementStrategy::NoiseVisual`].
pub const DEFAULT_VISUAL_NOISE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EnhancementStrategy {
    /// Zero heads whose entropy ratio is below the layer average.
    #[default]
    TverMask,
    ZeroVisual,
    NoiseVisual { sigma: f32 },
    DoubleTextual,
    /// Mask heads by the ratio of summed textual to summed visual attention.
    SumRatioMask,
}

impl EnhancementStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TverMask => "tver",
            Self::ZeroVisual => "zero-visual",
            Self::NoiseVisual { .. } => "noise-visual",
            Self::DoubleTextual => "double-textual",
            Self::SumRatioMask => "sum-ratio",
        }
    }
}

/// Splits an attention row into its textual and visual entries, preserving order.
pub fn slice_attention(row: &[f32], layout: &TokenLayout) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut textual = Vec::with_capacity(row.len());
    let mut visual = Vec::new();
    for (j, &a) in row.iter().enumerate() {
        match layout.modality(j)? {
            Modality::Textual => textual.push(a),
            Modality::Visual => visual.push(a),
        }
    }
    Ok((textual, visual))
}

/// Entropy in nats of `softmax(values)`.
pub fn subset_entropy(values: &[f32]) -> Result<f64> {
    subset_entropy_with(values, EntropyMode::Resoftmax)
}

pub fn subset_entropy_with(values: &[f32], mode: EntropyMode) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySubset);
    }
    // fixed summation order makes the result exactly permutation invariant
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let values = sorted.as_slice();
    let probs: Vec<f64> = match mode {
        EntropyMode::Resoftmax => {
            let max = values.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = values.iter().map(|&v| (v as f64 - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        }
        EntropyMode::Renormalize => {
            let s: f64 = values.iter().map(|&v| v as f64).sum();
            if s <= 0.0 {
                return Err(Error::ZeroMass { head: 0 });
            }
            values.iter().map(|&v| v as f64 / s).collect()
        }
    };
    let h = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    // -0.0 and rounding just below zero both clamp to 0
    Ok(h.max(0.0))
}

/// Mean of `scores`, computed relative to the minimum so that identical scores average to
/// exactly that score, and clamped into `[min, max]`.
pub fn layer_mean(scores: &[f64]) -> f64 {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = scores.iter().map(|s| s - min).sum::<f64>() / scores.len() as f64;
    (min + spread).clamp(min, max)
}

/// Heads scoring at or above the layer mean are kept.
pub fn keep_mask_from_scores(scores: &[f64]) -> (f64, Vec<bool>) {
    let avg = layer_mean(scores);
    (avg, scores.iter().map(|&s| s >= avg).collect())
}

/// Entropy ratio report over one layer's attention rows (one row per head).
pub fn compute_tver_rows(
    rows: &[&[f32]],
    layout: &TokenLayout,
    mode: EntropyMode,
) -> Result<TverReport> {
    let n = rows.len();
    let mut textual_entropy = Vec::with_capacity(n);
    let mut visual_entropy = Vec::with_capacity(n);
    let mut tver = Vec::with_capacity(n);
    for (head, row) in rows.iter().enumerate() {
        let (t, v) = slice_attention(row, layout)?;
        let ht = subset_entropy_with(&t, mode).map_err(|e| with_head(e, head))?;
        let hv = subset_entropy_with(&v, mode).map_err(|e| with_head(e, head))?;
        if hv <= 0.0 {
            return Err(Error::ZeroVisualEntropy { head });
        }
        textual_entropy.push(ht);
        visual_entropy.push(hv);
        tver.push(ht / hv);
    }
    let (layer_average, keep_mask) = keep_mask_from_scores(&tver);
    Ok(TverReport { textual_entropy, visual_entropy, tver, layer_average, keep_mask })
}

fn with_head(e: Error, head: usize) -> Error {
    match e {
        Error::ZeroMass { .. } => Error::ZeroMass { head },
        other => other,
    }
}

/// Entropy ratio report for `layer` of a snapshot.
pub fn compute_tver(
    snapshot: &AttentionSnapshot,
    layer: usize,
    layout: &TokenLayout,
    mode: EntropyMode,
) -> Result<TverReport> {
    compute_tver_rows(&snapshot.layer_rows(layer), layout, mode)
}

/// Per-head ratio of summed textual attention to summed visual attention.
pub fn sum_ratios(rows: &[&[f32]], layout: &TokenLayout) -> Result<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(head, row)| {
            let (t, v) = slice_attention(row, layout)?;
            let sv: f64 = v.iter().map(|&x| x as f64).sum();
            if v.is_empty() || t.is_empty() {
                return Err(Error::EmptySubset);
            }
            if sv <= 0.0 {
                return Err(Error::ZeroMass { head });
            }
            Ok(t.iter().map(|&x| x as f64).sum::<f64>() / sv)
        })
        .collect()
}

/// Rewrites one layer's attention rows according to `strategy`. Rows are not re-normalized.
///
/// `TverMask` needs the entropy report; the other variants ignore it.
pub fn apply_strategy<R: Rng + ?Sized>(
    strategy: EnhancementStrategy,
    rows: &[&[f32]],
    layout: &TokenLayout,
    report: Option<&TverReport>,
    rng: &mut R,
) -> Result<Vec<Vec<f32>>> {
    let masked = |mask: &[bool]| -> Vec<Vec<f32>> {
        rows.iter()
            .zip(mask)
            .map(|(r, &keep)| if keep { r.to_vec() } else { vec![0.0; r.len()] })
            .collect()
    };
    let per_position = |f: &mut dyn FnMut(Modality, f32) -> f32| -> Result<Vec<Vec<f32>>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, &a)| Ok(f(layout.modality(j)?, a)))
                    .collect::<Result<Vec<f32>>>()
            })
            .collect()
    };

    match strategy {
        EnhancementStrategy::TverMask => {
            let report = report.ok_or_else(|| {
                Error::InvalidParam("the tver strategy needs an entropy report".into())
            })?;
            if report.keep_mask.len() != rows.len() {
                return Err(Error::LengthMismatch {
                    left: rows.len(),
                    right: report.keep_mask.len(),
                });
            }
            Ok(masked(&report.keep_mask))
        }
        EnhancementStrategy::SumRatioMask => {
            let ratios = sum_ratios(rows, layout)?;
            Ok(masked(&keep_mask_from_scores(&ratios).1))
        }
        EnhancementStrategy::ZeroVisual => per_position(&mut |m, a| match m {
            Modality::Visual => 0.0,
            Modality::Textual => a,
        }),
        EnhancementStrategy::DoubleTextual => per_position(&mut |m, a| match m {
            Modality::Textual => a * 2.0,
            Modality::Visual => a,
        }),
        EnhancementStrategy::NoiseVisual { sigma } => {
            if sigma.is_nan() || sigma <= 0.0 {
                return Err(Error::InvalidParam(format!("noise sigma must be positive, got {sigma}")));
            }
            let normal = Normal::new(0.0f32, sigma)
                .map_err(|e| Error::InvalidParam(e.to_string()))?;
            per_position(&mut |m, a| match m {
                Modality::Visual => (a + normal.sample(rng)).max(0.0),
                Modality::Textual => a,
            })
        }
    }
}
