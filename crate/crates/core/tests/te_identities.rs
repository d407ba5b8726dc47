mod common;

use common::{max_abs_diff, random_embeddings, random_small_model};
use tedecode::model::{prefill_with, project_logits, Visibility};
use tedecode::te_branch::{te_logits, te_mha_output, MacCount};
use tedecode::{ModelWeights, StepOutput, TeHeadInput};

fn run(w: &ModelWeights, len: usize, seed: u64) -> (tedecode::KVCache, StepOutput) {
    let emb = random_embeddings(w.config.d_model, len, seed);
    prefill_with(w, &emb, &vec![Visibility::Visible; len]).unwrap()
}

fn rows_at(step: &StepOutput, layer: usize) -> Vec<Vec<f32>> {
    step.attention.layer_rows(layer).iter().map(|r| r.to_vec()).collect()
}

#[test]
fn keep_all_reproduces_main_attention_output() {
    for seed in 0..20 {
        let w = random_small_model(seed);
        let (cache, step) = run(&w, 10, seed + 100);
        for layer in 0..w.config.n_layers {
            let out = te_mha_output(
                &rows_at(&step, layer),
                cache.values(layer),
                &w.layers[layer].wo,
                &mut MacCount::default(),
            )
            .unwrap();
            let diff = max_abs_diff(&out, &step.mha_outputs[layer]);
            assert!(diff <= 1e-6, "seed {seed} layer {layer}: {diff}");
        }
    }
}

#[test]
fn single_kept_head_matches_block_multiply() {
    let w = random_small_model(3);
    let cfg = &w.config;
    let (cache, step) = run(&w, 9, 7);
    let layer = cfg.n_layers - 1;
    let rows = rows_at(&step, layer);
    let values = cache.values(layer);
    let wo = &w.layers[layer].wo;
    let t = rows[0].len();
    for keep in 0..cfg.n_heads {
        let masked: Vec<Vec<f32>> = rows
            .iter()
            .enumerate()
            .map(|(h, r)| if h == keep { r.clone() } else { vec![0.0; t] })
            .collect();
        let got = te_mha_output(&masked, values, wo, &mut MacCount::default()).unwrap();

        // a_h V_h, then multiply by the matching row block of W^O
        let off = keep * cfg.d_head;
        let mut head = vec![0.0f32; cfg.d_head];
        for j in 0..t {
            for k in 0..cfg.d_head {
                head[k] += rows[keep][j] * values[j * cfg.d_model + off + k];
            }
        }
        let mut want = vec![0.0f32; cfg.d_model];
        for (k, hk) in head.iter().enumerate() {
            for (c, wc) in want.iter_mut().enumerate() {
                *wc += hk * wo.get(off + k, c);
            }
        }
        assert!(max_abs_diff(&got, &want) <= 1e-6);
    }
}

#[test]
fn alg1_minus_eq17_is_projected_final_state() {
    for seed in 0..10 {
        let w = random_small_model(seed);
        let (cache, step) = run(&w, 8, seed);
        let layer = seed as usize % w.config.n_layers;
        let attn = te_mha_output(&rows_at(&step, layer), cache.values(layer), &w.layers[layer].wo, &mut MacCount::default())
            .unwrap();
        let a = te_logits(&step, &w, &attn, TeHeadInput::Alg1, &mut MacCount::default()).unwrap();
        let e = te_logits(&step, &w, &attn, TeHeadInput::Eq17, &mut MacCount::default()).unwrap();
        let diff: Vec<f32> = a.enhanced.iter().zip(&e.enhanced).map(|(x, y)| x - y).collect();
        let phi = project_logits(&w.head, step.final_hidden());
        assert!(max_abs_diff(&diff, &phi) <= 1e-5);
        assert_eq!(a.original, step.logits);
    }
}

#[test]
fn eq17_keep_all_at_last_layer_is_identity() {
    for seed in 0..20 {
        let w = random_small_model(seed);
        let (cache, step) = run(&w, 12, seed + 1);
        let last = w.config.n_layers - 1;
        let attn = te_mha_output(&rows_at(&step, last), cache.values(last), &w.layers[last].wo, &mut MacCount::default())
            .unwrap();
        let pair = te_logits(&step, &w, &attn, TeHeadInput::Eq17, &mut MacCount::default()).unwrap();
        assert!(max_abs_diff(&pair.enhanced, &pair.original) <= 1e-5);
    }
}

#[test]
fn enhancement_leaves_cache_untouched() {
    let w = random_small_model(5);
    let (cache, step) = run(&w, 10, 2);
    let before = cache.clone();
    for layer in 0..w.config.n_layers {
        let mut rows = rows_at(&step, layer);
        rows[0].iter_mut().for_each(|x| *x = 0.0);
        let attn = te_mha_output(&rows, cache.values(layer), &w.layers[layer].wo, &mut MacCount::default()).unwrap();
        te_logits(&step, &w, &attn, TeHeadInput::Alg1, &mut MacCount::default()).unwrap();
    }
    for layer in 0..w.config.n_layers {
        assert_eq!(cache.keys(layer), before.keys(layer));
        assert_eq!(cache.values(layer), before.values(layer));
    }
    assert_eq!(cache.len(), before.len());
}

#[test]
fn mha_cost_grows_linearly_in_context() {
    let w = random_small_model(8);
    let cfg = &w.config;
    let cost = |t: usize| {
        let (cache, step) = run(&w, t, 1);
        let mut macs = MacCount::default();
        te_mha_output(&rows_at(&step, 0), cache.values(0), &w.layers[0].wo, &mut macs).unwrap();
        macs.0
    };
    let (c4, c8, c12) = (cost(4), cost(8), cost(12));
    assert_eq!(c8 - c4, c12 - c8);
    assert_eq!(c8 - c4, (4 * cfg.d_model) as u64);
    assert_eq!(c4, (4 * cfg.d_model + cfg.d_model * cfg.d_model) as u64);
}
