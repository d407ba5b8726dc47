use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_tedecode");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn tedecode")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small model (3 layers) and a prompt file in `dir`.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let model = dir.join("m.tdm");
    ok(&[
        "init-model", "--out", s(&model), "--layers", "3", "--heads", "4", "--d-model", "32",
        "--d-mlp", "64", "--vocab", "64", "--max-seq-len", "128", "--te-layer", "1", "--seed", "3",
    ]);
    let prompt = dir.join("p.json");
    std::fs::write(
        &prompt,
        r#"{"text_prefix":[5,6,7,8],"n_visual":12,"visual_source":{"kind":"seeded-random","seed":2},"text_suffix":[9,10]}"#,
    )
    .unwrap();
    (model, prompt)
}

fn decode_tokens(model: &Path, prompt: &Path, extra: &[&str]) -> Vec<u32> {
    let mut args = vec!["decode", "--model", s(model), "--prompt", s(prompt), "--max-tokens", "40", "--ignore-eos"];
    args.extend_from_slice(extra);
    serde_json::from_slice(&ok(&args).stdout).unwrap()
}

fn read_trace(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn init_model_is_deterministic_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, prompt) = fixture(dir.path());
    let b = dir.path().join("b.tdm");
    std::fs::copy(&a, &b).unwrap();
    std::fs::remove_file(&a).unwrap();
    fixture(dir.path());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(decode_tokens(&a, &prompt, &[]).len(), 40);
}

#[test]
fn corrupted_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let mut bytes = std::fs::read(&model).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x40;
    std::fs::write(&model, bytes).unwrap();
    let out = run(&["decode", "--model", s(&model), "--prompt", s(&prompt), "--max-tokens", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("checksum"));
}

#[test]
fn zero_alphas_reproduce_regular() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let regular = decode_tokens(&model, &prompt, &["--method", "regular", "--seed", "4"]);
    let only = decode_tokens(&model, &prompt, &["--method", "only", "--seed", "4", "--alpha1", "0", "--alpha2", "0"]);
    assert_eq!(regular, only);
}

#[test]
fn eq17_keep_all_at_last_layer_stays_collaborative() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let trace = dir.path().join("t.jsonl");
    decode_tokens(
        &model,
        &prompt,
        &["--te-mode", "eq17", "--keep-all-heads", "--te-layer", "2", "--trace", s(&trace)],
    );
    let recs = read_trace(&trace);
    assert_eq!(recs.len(), 40);
    for r in recs {
        assert!(r["d_t"].as_f64().unwrap() <= 1e-4);
        assert_eq!(r["branch"], "collaborative");
    }
}

#[test]
fn zero_noise_vcd_reproduces_regular() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let regular = decode_tokens(&model, &prompt, &["--method", "regular"]);
    let vcd = decode_tokens(&model, &prompt, &["--method", "vcd", "--noise-std", "0"]);
    assert_eq!(regular, vcd);
}

#[test]
fn trace_has_one_complete_record_per_token() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let keys = [
        "method", "step", "position", "token_id", "d_t", "branch", "te_mode", "strategy", "tver",
        "keep_mask", "layer_avg", "textual_entropy", "visual_entropy", "logits_l1_distance",
        "m3id_coef", "n_masked", "logit_max", "step_ns",
    ];
    for method in ["regular", "only", "vcd", "m3id"] {
        let trace = dir.path().join(format!("{method}.jsonl"));
        let tokens = decode_tokens(&model, &prompt, &["--method", method, "--trace", s(&trace)]);
        let recs = read_trace(&trace);
        assert_eq!(recs.len(), tokens.len());
        for (i, r) in recs.iter().enumerate() {
            let obj = r.as_object().unwrap();
            for k in keys {
                assert!(obj.contains_key(k), "{method} record {i} lacks {k}");
            }
            assert_eq!(r["step"], i);
            assert_eq!(r["position"], 18 + i);
            assert_eq!(r["token_id"], tokens[i]);
        }
        if method == "only" {
            assert_eq!(recs[0]["tver"].as_array().unwrap().len(), 4);
        }
    }
}

#[test]
fn sweep_emits_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let csv = dir.path().join("s.csv");
    ok(&[
        "entropy-sweep", "--model", s(&model), "--prompt", s(&prompt), "--noise-levels", "0,0.5,1,3",
        "--samples", "2", "--out", s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "noise,textual_entropy,visual_entropy,tver");
    for l in &lines[1..] {
        let cells: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.is_finite()));
    }
}

#[test]
fn sweep_at_zero_noise_matches_clean_entropies() {
    let dir = tempfile::tempdir().unwrap();
    let (model, prompt) = fixture(dir.path());
    let trace = dir.path().join("t.jsonl");
    // the first generated step sees exactly the prompt, so its entropies are the clean ones
    decode_tokens(&model, &prompt, &["--te-layer", "1", "--trace", s(&trace)]);
    let first = &read_trace(&trace)[0];
    let mean = |k: &str| {
        let v: Vec<f64> = first[k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let out = ok(&[
        "entropy-sweep", "--model", s(&model), "--prompt", s(&prompt), "--noise-levels", "0",
        "--samples", "1", "--te-layer", "1",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((row[1] - mean("textual_entropy")).abs() <= 1e-9);
    assert!((row[2] - mean("visual_entropy")).abs() <= 1e-9);
}

#[test]
fn selftest_passes() {
    ok(&["selftest"]);
}
