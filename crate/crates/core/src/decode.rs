//! Autoregressive decoding sessions for every method, with per-token traces and forward counters.
//!
//! Every sampled token is fed back through the model, so a run over a `P`-token prompt that
//! generates `N` tokens performs exactly `P + N` forward steps per cache.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{fuse_logits, plausibility_mask, sample_token, Branch, DecodeParams};
use crate::baselines::{distort_visual, m3id_coefficient, m3id_fuse, vcd_fuse};
use crate::error::{Error, Result};
use crate::layout::Modality;
use crate::linalg::softmax_f64;
use crate::model::{forward_step_with, prefill_with, KVCache, StepOutput, Visibility};
use crate::prompt::Prompt;
use crate::te_branch::{te_logits, te_mha_output, MacCount, TeHeadInput};
use crate::tver::{apply_strategy, compute_tver, EnhancementStrategy, EntropyMode, TverReport};
use crate::weights::ModelWeights;

/// Reserved end-of-sequence token id.
pub const EOS_TOKEN: u32 = 0;

/// Options of the textual-enhancement method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceOptions {
    /// Intervention layer; `None` uses the model config's `te_layer`.
    pub te_layer: Option<usize>,
    pub te_mode: TeHeadInput,
    pub strategy: EnhancementStrategy,
    pub entropy_mode: EntropyMode,
    /// Bypass head selection and keep every head (diagnostic).
    pub keep_all_heads: bool,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            te_layer: None,
            te_mode: TeHeadInput::Alg1,
            strategy: EnhancementStrategy::TverMask,
            entropy_mode: EntropyMode::Resoftmax,
            keep_all_heads: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Regular,
    Only(EnhanceOptions),
    Vcd { alpha: f32, noise_std: f32, steps: usize },
    M3id { lambda: f32 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Regular => "regular",
            Self::Only(_) => "only",
            Self::Vcd { .. } => "vcd",
            Self::M3id { .. } => "m3id",
        }
    }

    pub fn only() -> Self {
        Self::Only(EnhanceOptions::default())
    }

    pub fn vcd() -> Self {
        Self::Vcd {
            alpha: crate::baselines::VCD_DEFAULT_ALPHA,
            noise_std: crate::baselines::VCD_DEFAULT_NOISE,
            steps: crate::baselines::VCD_DEFAULT_STEPS,
        }
    }

    pub fn m3id() -> Self {
        Self::M3id { lambda: crate::baselines::M3ID_DEFAULT_LAMBDA }
    }

    /// Parses `regular`, `only`, `vcd` or `m3id` with default options.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "regular" => Ok(Self::Regular),
            "only" => Ok(Self::only()),
            "vcd" => Ok(Self::vcd()),
            "m3id" => Ok(Self::m3id()),
            other => Err(Error::InvalidParam(format!("unknown method {other:?}"))),
        }
    }

    pub fn extra_compute(&self) -> crate::te_branch::ComputeAccount {
        use crate::te_branch::ComputeAccount;
        match self {
            Self::Regular => ComputeAccount { extra_mha_evals: 0, extra_mlp_evals: 0, extra_full_forwards: 0 },
            Self::Only(_) => ComputeAccount { extra_mha_evals: 1, extra_mlp_evals: 1, extra_full_forwards: 0 },
            Self::Vcd { .. } | Self::M3id { .. } => {
                ComputeAccount { extra_mha_evals: 0, extra_mlp_evals: 0, extra_full_forwards: 1 }
            }
        }
    }

    fn uses_counterpart(&self) -> bool {
        matches!(self, Self::Vcd { .. } | Self::M3id { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRequest {
    pub method: Method,
    pub params: DecodeParams,
    pub max_tokens: usize,
    /// Decoding stops after this token is produced.
    pub stop_token: Option<u32>,
    /// Apply the plausibility constraint to regular decoding as well.
    pub regular_plausibility: bool,
    /// Record per-token wall time in the trace (makes traces non-reproducible).
    pub record_timing: bool,
}

impl DecodeRequest {
    pub fn new(method: Method, params: DecodeParams, max_tokens: usize) -> Self {
        Self {
            method,
            params,
            max_tokens,
            stop_token: Some(EOS_TOKEN),
            regular_plausibility: true,
            record_timing: false,
        }
    }

    pub fn without_stop(mut self) -> Self {
        self.stop_token = None;
        self
    }
}

/// One line of the JSONL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub method: String,
    pub step: usize,
    pub position: usize,
    pub token_id: u32,
    pub d_t: Option<f64>,
    pub branch: Option<Branch>,
    pub te_mode: Option<String>,
    pub strategy: Option<String>,
    pub tver: Option<Vec<f64>>,
    pub keep_mask: Option<Vec<bool>>,
    pub layer_avg: Option<f64>,
    pub textual_entropy: Option<Vec<f64>>,
    pub visual_entropy: Option<Vec<f64>>,
    /// Sum of absolute differences between the original and the counterpart logits.
    pub logits_l1_distance: Option<f64>,
    pub m3id_coef: Option<f64>,
    pub n_masked: usize,
    pub logit_max: f32,
    pub step_ns: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardStats {
    pub prompt_len: u64,
    pub generated: u64,
    pub full_forwards: u64,
    pub extra_mha_evals: u64,
    pub extra_mlp_evals: u64,
    pub te_macs: u64,
    pub wall_ns_total: u64,
    pub wall_ns_decode: u64,
    pub wall_ns_per_token: f64,
    pub peak_alloc_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub tokens: Vec<u32>,
    pub trace: Vec<TraceRecord>,
    pub stats: ForwardStats,
}

impl DecodeOutput {
    pub fn token_hash(&self) -> String {
        token_hash(&self.tokens)
    }

    pub fn write_trace(&self, mut w: impl Write) -> Result<()> {
        for rec in &self.trace {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// SHA-256 over the little-endian token ids, hex encoded.
pub fn token_hash(tokens: &[u32]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Counterpart {
    cache: KVCache,
    step: StepOutput,
    visibility: Visibility,
}

/// Runs one decoding session.
pub fn decode(weights: &ModelWeights, prompt: &Prompt, req: &DecodeRequest) -> Result<DecodeOutput> {
    let cfg = &weights.config;
    let params = &req.params;
    params.validate()?;
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let needed = prompt.len() + req.max_tokens;
    if needed > cfg.max_seq_len {
        return Err(Error::CacheOverflow { len: needed, max: cfg.max_seq_len });
    }
    let te_opts = match req.method {
        Method::Only(o) => {
            let layer = o.te_layer.unwrap_or(cfg.te_layer);
            if layer >= cfg.n_layers {
                return Err(Error::InvalidParam(format!(
                    "te_layer {layer} out of range for {} layers",
                    cfg.n_layers
                )));
            }
            Some((layer, o))
        }
        _ => None,
    };

    crate::alloc::reset_peak();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut aux_rng = ChaCha8Rng::seed_from_u64(params.seed);
    aux_rng.set_stream(1);

    let mut layout = prompt.layout.clone();
    let p = prompt.len() as u64;
    let mut stats = ForwardStats { prompt_len: p, ..Default::default() };

    let visible = vec![Visibility::Visible; prompt.len()];
    let (mut cache, mut step) = prefill_with(weights, &prompt.embeddings, &visible)?;
    stats.full_forwards += p;

    let mut counterpart = match req.method {
        Method::Vcd { noise_std, steps, .. } => {
            let distorted = distort_visual(&prompt.embeddings, &layout, noise_std, steps, &mut aux_rng)?;
            let (cache, step) = prefill_with(weights, &distorted, &visible)?;
            Some(Counterpart { cache, step, visibility: Visibility::Visible })
        }
        Method::M3id { .. } => {
            let vis: Vec<Visibility> = layout
                .kinds()
                .iter()
                .map(|k| if *k == Modality::Visual { Visibility::Hidden } else { Visibility::Visible })
                .collect();
            let (cache, step) = prefill_with(weights, &prompt.embeddings, &vis)?;
            Some(Counterpart { cache, step, visibility: Visibility::Visible })
        }
        _ => None,
    };
    if counterpart.is_some() {
        stats.full_forwards += p;
    }

    let decode_started = Instant::now();
    let mut tokens = Vec::with_capacity(req.max_tokens);
    let mut trace = Vec::with_capacity(req.max_tokens);
    let mut macs = MacCount::default();

    for i in 0..req.max_tokens {
        let step_started = Instant::now();
        let mut rec = TraceRecord {
            method: req.method.name().to_string(),
            step: i,
            position: cache.len(),
            token_id: 0,
            d_t: None,
            branch: None,
            te_mode: None,
            strategy: None,
            tver: None,
            keep_mask: None,
            layer_avg: None,
            textual_entropy: None,
            visual_entropy: None,
            logits_l1_distance: None,
            m3id_coef: None,
            n_masked: 0,
            logit_max: 0.0,
            step_ns: None,
        };

        let fused = match req.method {
            Method::Regular => step.logits.clone(),
            Method::Only(_) => {
                let (te_layer, opts) = te_opts.expect("set for Only");
                let rows = step.attention.layer_rows(te_layer);
                let report: Option<TverReport> = match opts.strategy {
                    EnhancementStrategy::TverMask if !opts.keep_all_heads => {
                        Some(compute_tver(&step.attention, te_layer, &layout, opts.entropy_mode)?)
                    }
                    _ => compute_tver(&step.attention, te_layer, &layout, opts.entropy_mode).ok(),
                };
                let modified: Vec<Vec<f32>> = if opts.keep_all_heads {
                    rows.iter().map(|r| r.to_vec()).collect()
                } else {
                    apply_strategy(opts.strategy, &rows, &layout, report.as_ref(), &mut aux_rng)?
                };
                let te_attn =
                    te_mha_output(&modified, cache.values(te_layer), &weights.layers[te_layer].wo, &mut macs)?;
                let pair = te_logits(&step, weights, &te_attn, opts.te_mode, &mut macs)?;
                stats.extra_mha_evals += 1;
                stats.extra_mlp_evals += 1;
                let fused = fuse_logits(&pair, params)?;

                rec.d_t = Some(fused.distance);
                rec.branch = Some(fused.branch);
                rec.te_mode = Some(opts.te_mode.name().to_string());
                rec.strategy = Some(opts.strategy.name().to_string());
                rec.logits_l1_distance = Some(l1(&pair.original, &pair.enhanced));
                if let Some(r) = report {
                    rec.layer_avg = Some(r.layer_average);
                    rec.keep_mask = Some(if opts.keep_all_heads { vec![true; r.tver.len()] } else { r.keep_mask });
                    rec.tver = Some(r.tver);
                    rec.textual_entropy = Some(r.textual_entropy);
                    rec.visual_entropy = Some(r.visual_entropy);
                }
                fused.logits
            }
            Method::Vcd { alpha, .. } => {
                let other = &counterpart.as_ref().expect("vcd counterpart").step.logits;
                rec.logits_l1_distance = Some(l1(&step.logits, other));
                vcd_fuse(&step.logits, other, alpha)?
            }
            Method::M3id { lambda } => {
                let other = &counterpart.as_ref().expect("m3id counterpart").step.logits;
                rec.logits_l1_distance = Some(l1(&step.logits, other));
                rec.m3id_coef = Some(m3id_coefficient(lambda, i));
                m3id_fuse(&step.logits, other, lambda, i)?
            }
        };

        rec.logit_max = fused.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let apply_mask = req.regular_plausibility || req.method != Method::Regular;
        let (masked, n_masked) = if apply_mask {
            plausibility_mask(&fused, &softmax_f64(&step.logits), params.beta)
        } else {
            (fused, 0)
        };
        rec.n_masked = n_masked;
        let token = sample_token(&masked, params, &mut rng)?;
        rec.token_id = token;
        tokens.push(token);

        let emb = weights.embed_token(token)?;
        step = forward_step_with(weights, &mut cache, emb, Visibility::Visible)?;
        stats.full_forwards += 1;
        if let Some(c) = counterpart.as_mut() {
            c.step = forward_step_with(weights, &mut c.cache, emb, c.visibility)?;
            stats.full_forwards += 1;
        }
        layout.push_generated();

        if req.record_timing {
            rec.step_ns = Some(step_started.elapsed().as_nanos() as u64);
        }
        trace.push(rec);
        if req.stop_token == Some(token) {
            break;
        }
    }
    debug_assert!(!req.method.uses_counterpart() || counterpart.is_some());

    stats.generated = tokens.len() as u64;
    stats.te_macs = macs.0;
    stats.wall_ns_decode = decode_started.elapsed().as_nanos() as u64;
    stats.wall_ns_total = started.elapsed().as_nanos() as u64;
    stats.wall_ns_per_token = if tokens.is_empty() {
        0.0
    } else {
        stats.wall_ns_decode as f64 / tokens.len() as f64
    };
    stats.peak_alloc_bytes = crate::alloc::peak_bytes();
    Ok(DecodeOutput { tokens, trace, stats })
}

fn l1(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum()
}

/// Forward-counter values a run must report: `(full_forwards, extra_mha_evals, extra_mlp_evals)`.
pub fn expected_counters(method: &Method, prompt_len: u64, generated: u64) -> (u64, u64, u64) {
    let acc = method.extra_compute();
    let passes = 1 + acc.extra_full_forwards;
    (
        passes * (prompt_len + generated),
        acc.extra_mha_evals * generated,
        acc.extra_mlp_evals * generated,
    )
}
