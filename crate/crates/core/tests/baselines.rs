use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tedecode::baselines::{distort_visual, m3id_coefficient, m3id_fuse, vcd_fuse};
use tedecode::decode::expected_counters;
use tedecode::{decode, DecodeParams, DecodeRequest, Method, ModelConfig, ModelWeights, PromptSpec, TokenLayout};

fn model() -> ModelWeights {
    let cfg = ModelConfig::new(2, 4, 32, 64, 50, 64).with_te_layer(0);
    ModelWeights::init_seeded(&cfg, 21).unwrap()
}

fn vec_pair(n: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    (prop::collection::vec(-5.0f32..5.0, n), prop::collection::vec(-5.0f32..5.0, n))
}

proptest! {
    #[test]
    fn vcd_superposition((f1, g1) in vec_pair(8), (f2, g2) in vec_pair(8), alpha in 0.0f32..3.0) {
        let sum = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        let whole = vcd_fuse(&sum(&f1, &f2), &sum(&g1, &g2), alpha).unwrap();
        let parts = sum(&vcd_fuse(&f1, &g1, alpha).unwrap(), &vcd_fuse(&f2, &g2, alpha).unwrap());
        for (a, b) in whole.iter().zip(&parts) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()) * 8.0);
        }
    }

    #[test]
    fn m3id_superposition((f1, u1) in vec_pair(8), (f2, u2) in vec_pair(8), t in 0usize..60) {
        let sum = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        let whole = m3id_fuse(&sum(&f1, &f2), &sum(&u1, &u2), 0.02, t).unwrap();
        let parts = sum(&m3id_fuse(&f1, &u1, 0.02, t).unwrap(), &m3id_fuse(&f2, &u2, 0.02, t).unwrap());
        for (a, b) in whole.iter().zip(&parts) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()) * 8.0);
        }
    }

    #[test]
    fn m3id_first_step_is_conditioned((f, u) in vec_pair(16)) {
        prop_assert_eq!(m3id_fuse(&f, &u, 0.02, 0).unwrap(), f);
    }
}

#[test]
fn coefficient_at_fifty_steps() {
    let c = m3id_coefficient(0.02, 50);
    assert!((c - (std::f64::consts::E - 1.0)).abs() <= 1e-6);
}

#[test]
fn distortion_variance_matches_noise_std() {
    let layout = TokenLayout::from_prompt(1, 1, 0);
    let base = vec![vec![0.0f32; 4], vec![0.0f32; 4]];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for sigma in [0.5f32, 1.0, 2.0] {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        let mut n = 0.0f64;
        for _ in 0..1000 {
            let out = distort_visual(&base, &layout, sigma, 500, &mut rng).unwrap();
            assert_eq!(out[0], base[0]);
            for &x in &out[1] {
                sum += x as f64;
                sq += (x as f64).powi(2);
                n += 1.0;
            }
        }
        let mean = sum / n;
        let var = sq / n - mean * mean;
        let want = (sigma as f64).powi(2);
        assert!((var - want).abs() <= 0.1 * want, "sigma {sigma}: variance {var}");
    }
}

fn tokens(w: &ModelWeights, spec: &PromptSpec, method: Method, n: usize) -> Vec<u32> {
    let prompt = spec.materialize(w).unwrap();
    let req = DecodeRequest::new(method, DecodeParams { seed: 5, ..Default::default() }, n).without_stop();
    decode(w, &prompt, &req).unwrap().tokens
}

#[test]
fn zero_noise_vcd_matches_regular() {
    let w = model();
    let spec = PromptSpec::synthetic(50, 4, 8, 2, 3);
    let regular = tokens(&w, &spec, Method::Regular, 30);
    let vcd = tokens(&w, &spec, Method::Vcd { alpha: 1.0, noise_std: 0.0, steps: 500 }, 30);
    assert_eq!(regular, vcd);
}

#[test]
fn zero_alpha_vcd_keeps_original_pass() {
    // the distorted cache must not leak into the original pass
    let w = model();
    let spec = PromptSpec::synthetic(50, 4, 8, 2, 3);
    let regular = tokens(&w, &spec, Method::Regular, 30);
    let vcd = tokens(&w, &spec, Method::Vcd { alpha: 0.0, noise_std: 2.0, steps: 50 }, 30);
    assert_eq!(regular, vcd);
}

#[test]
fn m3id_without_visual_tokens_matches_regular() {
    let w = model();
    let spec = PromptSpec::synthetic(50, 6, 0, 3, 9);
    assert_eq!(tokens(&w, &spec, Method::Regular, 25), tokens(&w, &spec, Method::m3id(), 25));
}

#[test]
fn counters_follow_formula() {
    let w = model();
    for (prefix, vis, suffix, n) in [(1usize, 0usize, 0usize, 1usize), (2, 5, 1, 7), (4, 8, 2, 20), (3, 3, 3, 0)] {
        let spec = PromptSpec::synthetic(50, prefix, vis, suffix, 1);
        let prompt = spec.materialize(&w).unwrap();
        let p = prompt.len() as u64;
        for method in [Method::Regular, Method::only(), Method::vcd(), Method::m3id()] {
            let req = DecodeRequest::new(method, DecodeParams::default(), n).without_stop();
            if matches!(method, Method::Only(_)) && vis == 0 {
                continue;
            }
            let s = decode(&w, &prompt, &req).unwrap().stats;
            let nn = n as u64;
            let want = match method {
                Method::Regular => (p + nn, 0, 0),
                Method::Only(_) => (p + nn, nn, nn),
                _ => (2 * (p + nn), 0, 0),
            };
            assert_eq!((s.full_forwards, s.extra_mha_evals, s.extra_mlp_evals), want, "{}", method.name());
            assert_eq!(expected_counters(&method, p, nn), want);
        }
    }
}
