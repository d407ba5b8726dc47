//! Quick built-in consistency checks, run by the `selftest` subcommand.

use crate::adaptive::{DecodeParams, SamplingMode};
use crate::config::ModelConfig;
use crate::decode::{decode, expected_counters, DecodeRequest, EnhanceOptions, Method};
use crate::error::Result;
use crate::format::{decode_model, encode_model};
use crate::model::prefill;
use crate::prompt::PromptSpec;
use crate::te_branch::{te_logits, te_mha_output, MacCount, TeHeadInput};
use crate::weights::ModelWeights;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn max_abs(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

pub fn run_selftest() -> Result<Vec<Check>> {
    let cfg = ModelConfig::new(4, 4, 32, 64, 64, 96).with_te_layer(3);
    let w = ModelWeights::init_seeded(&cfg, 17)?;
    let spec = PromptSpec::synthetic(cfg.vocab_size, 4, 8, 3, 5);
    let prompt = spec.materialize(&w)?;
    let mut checks = Vec::new();

    let (cache, step) = prefill(&w, &prompt.embeddings, &prompt.layout)?;
    let worst = (0..cfg.n_layers)
        .flat_map(|l| (0..cfg.n_heads).map(move |h| (l, h)))
        .map(|(l, h)| (step.attention.row(l, h).iter().sum::<f32>() - 1.0).abs())
        .fold(0.0, f32::max);
    checks.push(Check {
        name: "attention rows sum to one",
        passed: worst <= 1e-6,
        detail: format!("max |sum - 1| = {worst:e}"),
    });

    let l = cfg.te_layer;
    let rows: Vec<Vec<f32>> = step.attention.layer_rows(l).iter().map(|r| r.to_vec()).collect();
    let mut macs = MacCount::default();
    let te = te_mha_output(&rows, cache.values(l), &w.layers[l].wo, &mut macs)?;
    let d = max_abs(&te, &step.mha_outputs[l]);
    checks.push(Check {
        name: "enhanced attention with every head kept equals the main output",
        passed: d <= 1e-6,
        detail: format!("max abs diff {d:e}"),
    });

    let pair = te_logits(&step, &w, &te, TeHeadInput::Eq17, &mut macs)?;
    let d = max_abs(&pair.original, &pair.enhanced);
    checks.push(Check {
        name: "eq17 head input at the last layer reproduces the original logits",
        passed: d <= 1e-5,
        detail: format!("max abs diff {d:e}"),
    });

    let params = DecodeParams { seed: 3, ..Default::default() };
    let regular = decode(&w, &prompt, &DecodeRequest::new(Method::Regular, params, 12).without_stop())?;
    let zero = DecodeParams { alpha1: 0.0, alpha2: 0.0, ..params };
    let only = decode(&w, &prompt, &DecodeRequest::new(Method::only(), zero, 12).without_stop())?;
    checks.push(Check {
        name: "zero fusion weights reproduce regular decoding",
        passed: only.tokens == regular.tokens,
        detail: format!("{:?} vs {:?}", only.tokens, regular.tokens),
    });

    let vcd0 = Method::Vcd { alpha: 1.0, noise_std: 0.0, steps: 500 };
    let vcd = decode(&w, &prompt, &DecodeRequest::new(vcd0, params, 12).without_stop())?;
    checks.push(Check {
        name: "noise-free distorted contrast reproduces regular decoding",
        passed: vcd.tokens == regular.tokens,
        detail: format!("{:?}", vcd.tokens),
    });

    let mut ok = true;
    for m in [Method::Regular, Method::only(), Method::vcd(), Method::m3id()] {
        let out = decode(&w, &prompt, &DecodeRequest::new(m, params, 7).without_stop())?;
        let s = &out.stats;
        ok &= (s.full_forwards, s.extra_mha_evals, s.extra_mlp_evals)
            == expected_counters(&m, s.prompt_len, s.generated);
    }
    checks.push(Check {
        name: "forward counters match closed forms",
        passed: ok,
        detail: String::new(),
    });

    let greedy = DecodeParams { sampling: SamplingMode::Greedy, ..params };
    let keep_all = Method::Only(EnhanceOptions {
        te_layer: Some(cfg.n_layers - 1),
        te_mode: TeHeadInput::Eq17,
        keep_all_heads: true,
        ..Default::default()
    });
    let out = decode(&w, &prompt, &DecodeRequest::new(keep_all, greedy, 8).without_stop())?;
    let worst = out.trace.iter().filter_map(|r| r.d_t).fold(0.0, f64::max);
    checks.push(Check {
        name: "identity branch stays collaborative",
        passed: worst <= 1e-4 && out.trace.iter().all(|r| r.branch == Some(crate::adaptive::Branch::Collaborative)),
        detail: format!("max d_t {worst:e}"),
    });

    let bytes = encode_model(&w)?;
    let again = encode_model(&decode_model(&bytes)?)?;
    checks.push(Check {
        name: "model file round-trips byte for byte",
        passed: bytes == again,
        detail: format!("{} bytes", bytes.len()),
    });

    Ok(checks)
}
