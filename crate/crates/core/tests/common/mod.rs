//! Shared test helpers, including a direct full-sequence forward pass used as an oracle for the
//! cached implementation. It recomputes every position's queries, keys and values from scratch
//! with plain loops and never touches the library's forward code.

#![allow(dead_code)]

use tedecode::{ModelConfig, ModelWeights};

fn matvec(x: &[f32], rows: usize, cols: usize, w: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; cols];
    for c in 0..cols {
        let mut s = 0.0f32;
        for r in 0..rows {
            s += x[r] * w[r * cols + c];
        }
        out[c] = s;
    }
    out
}

fn rms(x: &[f32], g: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let ms: f32 = x.iter().map(|v| v * v).sum::<f32>() / n;
    let s = (ms + 1e-5).sqrt();
    x.iter().zip(g).map(|(v, gi)| v / s * gi).collect()
}

fn gelu(x: f32) -> f32 {
    let c = (2.0f32 / std::f32::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Logits at every position of `embeddings` (position embeddings are added here).
pub fn oracle_logits(w: &ModelWeights, embeddings: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let cfg = &w.config;
    let (d, nh, dk) = (cfg.d_model, cfg.n_heads, cfg.d_head);
    let n = embeddings.len();
    let mut hs: Vec<Vec<f32>> = embeddings
        .iter()
        .enumerate()
        .map(|(p, e)| e.iter().zip(w.position_embedding.row(p)).map(|(a, b)| a + b).collect())
        .collect();

    for layer in &w.layers {
        let xs: Vec<Vec<f32>> = hs.iter().map(|h| rms(h, &layer.attn_norm)).collect();
        let q: Vec<Vec<f32>> = xs.iter().map(|x| matvec(x, d, d, &layer.wq.data)).collect();
        let k: Vec<Vec<f32>> = xs.iter().map(|x| matvec(x, d, d, &layer.wk.data)).collect();
        let v: Vec<Vec<f32>> = xs.iter().map(|x| matvec(x, d, d, &layer.wv.data)).collect();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut concat = vec![0.0f32; d];
            for h in 0..nh {
                let o = h * dk;
                let scores: Vec<f32> = (0..=i)
                    .map(|j| (0..dk).map(|c| q[i][o + c] * k[j][o + c]).sum::<f32>() / (dk as f32).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let e: Vec<f32> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f32 = e.iter().sum();
                for j in 0..=i {
                    for c in 0..dk {
                        concat[o + c] += e[j] / z * v[j][o + c];
                    }
                }
            }
            let attn = matvec(&concat, d, d, &layer.wo.data);
            let hbar: Vec<f32> = hs[i].iter().zip(&attn).map(|(a, b)| a + b).collect();
            let x2 = rms(&hbar, &layer.mlp_norm);
            let up: Vec<f32> = matvec(&x2, d, cfg.d_mlp, &layer.w_up.data)
                .iter()
                .zip(&layer.b_up)
                .map(|(a, b)| gelu(a + b))
                .collect();
            let down = matvec(&up, cfg.d_mlp, d, &layer.w_down.data);
            next.push(
                hbar.iter().zip(&down).zip(&layer.b_down).map(|((a, b), c)| a + b + c).collect(),
            );
        }
        hs = next;
    }
    hs.iter().map(|h| matvec(h, d, cfg.vocab_size, &w.head.data)).collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Small random model with a deterministic choice of shape from `seed`.
pub fn random_small_model(seed: u64) -> ModelWeights {
    let n_layers = 1 + (seed % 4) as usize;
    let n_heads = [1usize, 2, 4][(seed / 4 % 3) as usize];
    let d_model = n_heads * [4usize, 8][(seed / 12 % 2) as usize];
    let cfg = ModelConfig::new(n_layers, n_heads, d_model, 2 * d_model, 17 + seed as usize % 5, 16)
        .with_te_layer(seed as usize % n_layers)
        .with_seed(seed);
    ModelWeights::init_seeded(&cfg, seed).unwrap()
}

/// Random prompt embeddings in the range used for weights, `len` rows of `d`.
pub fn random_embeddings(d: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()
}
