//! Python module `tedecode`: model construction, prompts, decoding and the scoring helpers.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use tedecode::adaptive::{self, Branch, SamplingMode};
use tedecode::baselines;
use tedecode::format;
use tedecode::tver;
use tedecode::{
    DecodeParams, DecodeRequest, EnhanceOptions, EnhancementStrategy, EntropyMode, LogitsPair, Method,
    PromptSpec, TeHeadInput, TokenLayout,
};

fn to_py(e: tedecode::Error) -> PyErr {
    match e {
        tedecode::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_value<'py>(py: Python<'py>, value: serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(&value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn entropy_mode(name: &str) -> PyResult<EntropyMode> {
    match name {
        "resoftmax" => Ok(EntropyMode::Resoftmax),
        "renormalize" => Ok(EntropyMode::Renormalize),
        other => Err(PyValueError::new_err(format!("unknown entropy mode {other:?}"))),
    }
}

fn strategy(name: &str, sigma: f32) -> PyResult<EnhancementStrategy> {
    Ok(match name {
        "tver" => EnhancementStrategy::TverMask,
        "zero-visual" => EnhancementStrategy::ZeroVisual,
        "noise-visual" => EnhancementStrategy::NoiseVisual { sigma },
        "double-textual" => EnhancementStrategy::DoubleTextual,
        "sum-ratio" => EnhancementStrategy::SumRatioMask,
        other => return Err(PyValueError::new_err(format!("unknown strategy {other:?}"))),
    })
}

#[pyclass(name = "ModelConfig", module = "tedecode", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: tedecode::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (n_layers=8, n_heads=8, d_model=256, d_mlp=1024, vocab_size=1024, max_seq_len=1024, te_layer=0, rng_seed=7))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_layers: usize,
        n_heads: usize,
        d_model: usize,
        d_mlp: usize,
        vocab_size: usize,
        max_seq_len: usize,
        te_layer: usize,
        rng_seed: u64,
    ) -> PyResult<Self> {
        let inner = tedecode::ModelConfig::new(n_layers, n_heads, d_model, d_mlp, vocab_size, max_seq_len)
            .with_te_layer(te_layer)
            .with_seed(rng_seed);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn reference() -> Self {
        Self { inner: tedecode::ModelConfig::reference() }
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers
    }
    #[getter]
    fn n_heads(&self) -> usize {
        self.inner.n_heads
    }
    #[getter]
    fn d_model(&self) -> usize {
        self.inner.d_model
    }
    #[getter]
    fn d_mlp(&self) -> usize {
        self.inner.d_mlp
    }
    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }
    #[getter]
    fn max_seq_len(&self) -> usize {
        self.inner.max_seq_len
    }
    #[getter]
    fn te_layer(&self) -> usize {
        self.inner.te_layer
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "ModelConfig(n_layers={}, n_heads={}, d_model={}, d_mlp={}, vocab_size={}, max_seq_len={}, te_layer={})",
            c.n_layers, c.n_heads, c.d_model, c.d_mlp, c.vocab_size, c.max_seq_len, c.te_layer
        )
    }
}

/// Model weights, created from a seed or read from a model file.
#[pyclass(name = "Model", module = "tedecode")]
struct PyModel {
    inner: tedecode::ModelWeights,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (config, seed=None))]
    fn init(config: &PyModelConfig, seed: Option<u64>) -> PyResult<Self> {
        let seed = seed.unwrap_or(config.inner.rng_seed);
        let inner = tedecode::ModelWeights::init_seeded(&config.inner, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: format::read_model(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        format::write_model(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.inner.config.clone() }
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
}

/// A prompt resolved against a model: text prefix, visual block, text suffix.
#[pyclass(name = "Prompt", module = "tedecode")]
struct PyPrompt {
    inner: tedecode::Prompt,
}

#[pymethods]
impl PyPrompt {
    #[staticmethod]
    #[pyo3(signature = (model, prefix, n_visual, suffix, seed=1))]
    fn synthetic(model: &PyModel, prefix: usize, n_visual: usize, suffix: usize, seed: u64) -> PyResult<Self> {
        let spec = PromptSpec::synthetic(model.inner.config.vocab_size, prefix, n_visual, suffix, seed);
        Ok(Self { inner: spec.materialize(&model.inner).map_err(to_py)? })
    }

    #[staticmethod]
    fn reference(model: &PyModel) -> PyResult<Self> {
        let spec = PromptSpec::reference(model.inner.config.vocab_size);
        Ok(Self { inner: spec.materialize(&model.inner).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_file(model: &PyModel, path: PathBuf) -> PyResult<Self> {
        let spec = PromptSpec::from_file(path).map_err(to_py)?;
        Ok(Self { inner: spec.materialize(&model.inner).map_err(to_py)? })
    }

    #[getter]
    fn n_visual(&self) -> usize {
        self.inner.n_visual
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Generates tokens and returns `{"tokens", "trace", "stats", "token_hash"}`.
#[pyfunction]
#[pyo3(signature = (
    model, prompt, method="only", max_tokens=128, *, seed=0, alpha1=3.0, alpha2=1.0, gamma=0.2,
    beta=0.1, temperature=1.0, greedy=false, te_layer=None, te_mode="alg1", strategy_name="tver",
    noise_sigma=0.1, entropy_mode_name="resoftmax", keep_all_heads=false, vcd_alpha=1.0,
    noise_std=1.0, noise_steps=500, lambda_=0.02, stop_at_eos=true
))]
#[allow(clippy::too_many_arguments)]
fn decode<'py>(
    py: Python<'py>,
    model: &PyModel,
    prompt: &PyPrompt,
    method: &str,
    max_tokens: usize,
    seed: u64,
    alpha1: f32,
    alpha2: f32,
    gamma: f32,
    beta: f32,
    temperature: f32,
    greedy: bool,
    te_layer: Option<usize>,
    te_mode: &str,
    strategy_name: &str,
    noise_sigma: f32,
    entropy_mode_name: &str,
    keep_all_heads: bool,
    vcd_alpha: f32,
    noise_std: f32,
    noise_steps: usize,
    lambda_: f32,
    stop_at_eos: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let method = match method {
        "regular" => Method::Regular,
        "only" => Method::Only(EnhanceOptions {
            te_layer,
            te_mode: match te_mode {
                "alg1" => TeHeadInput::Alg1,
                "eq17" => TeHeadInput::Eq17,
                other => return Err(PyValueError::new_err(format!("unknown te_mode {other:?}"))),
            },
            strategy: strategy(strategy_name, noise_sigma)?,
            entropy_mode: entropy_mode(entropy_mode_name)?,
            keep_all_heads,
        }),
        "vcd" => Method::Vcd { alpha: vcd_alpha, noise_std, steps: noise_steps },
        "m3id" => Method::M3id { lambda: lambda_ },
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let params = DecodeParams {
        alpha1,
        alpha2,
        gamma,
        beta,
        temperature,
        sampling: if greedy { SamplingMode::Greedy } else { SamplingMode::Sample },
        seed,
    };
    let mut req = DecodeRequest::new(method, params, max_tokens);
    if !stop_at_eos {
        req = req.without_stop();
    }
    let model = &model.inner;
    let prompt = &prompt.inner;
    let out = py.detach(|| tedecode::decode(model, prompt, &req)).map_err(to_py)?;
    let result = serde_json::json!({
        "tokens": out.tokens,
        "token_hash": out.token_hash(),
        "trace": out.trace,
        "stats": out.stats,
    });
    json_value(py, result)
}

/// Entropy of one attention slice.
#[pyfunction]
#[pyo3(signature = (values, mode="resoftmax"))]
fn subset_entropy(values: Vec<f32>, mode: &str) -> PyResult<f64> {
    tver::subset_entropy_with(&values, entropy_mode(mode)?).map_err(to_py)
}

/// Per-head entropy ratios for one layer's attention rows over a prefix/visual/suffix layout.
#[pyfunction]
#[pyo3(signature = (rows, n_prefix, n_visual, n_suffix=0, mode="resoftmax"))]
fn compute_tver<'py>(
    py: Python<'py>,
    rows: Vec<Vec<f32>>,
    n_prefix: usize,
    n_visual: usize,
    n_suffix: usize,
    mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let layout = TokenLayout::from_prompt(n_prefix, n_visual, n_suffix);
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let report = tver::compute_tver_rows(&refs, &layout, entropy_mode(mode)?).map_err(to_py)?;
    json_value(py, serde_json::json!(report))
}

#[pyfunction]
fn manhattan_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    adaptive::manhattan_distance(&p, &q).map_err(to_py)
}

/// Returns `(fused_logits, branch, distance)`.
#[pyfunction]
#[pyo3(signature = (original, enhanced, alpha1=3.0, alpha2=1.0, gamma=0.2))]
fn fuse_logits(
    original: Vec<f32>,
    enhanced: Vec<f32>,
    alpha1: f32,
    alpha2: f32,
    gamma: f32,
) -> PyResult<(Vec<f32>, &'static str, f64)> {
    let params = DecodeParams { alpha1, alpha2, gamma, ..Default::default() };
    let fused = adaptive::fuse_logits(&LogitsPair { original, enhanced }, &params).map_err(to_py)?;
    let branch = match fused.branch {
        Branch::Collaborative => "collaborative",
        Branch::Contrastive => "contrastive",
    };
    Ok((fused.logits, branch, fused.distance))
}

#[pyfunction]
#[pyo3(signature = (original, distorted, alpha=1.0))]
fn vcd_fuse(original: Vec<f32>, distorted: Vec<f32>, alpha: f32) -> PyResult<Vec<f32>> {
    baselines::vcd_fuse(&original, &distorted, alpha).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (conditioned, unconditioned, step, lambda_=0.02))]
fn m3id_fuse(conditioned: Vec<f32>, unconditioned: Vec<f32>, step: usize, lambda_: f32) -> PyResult<Vec<f32>> {
    baselines::m3id_fuse(&conditioned, &unconditioned, lambda_, step).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (step, lambda_=0.02))]
fn m3id_coefficient(step: usize, lambda_: f32) -> f64 {
    baselines::m3id_coefficient(lambda_, step)
}

#[pyfunction]
fn token_hash(tokens: Vec<u32>) -> String {
    tedecode::decode::token_hash(&tokens)
}

#[pymodule(name = "tedecode")]
fn tedecode_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPrompt>()?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(subset_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(compute_tver, m)?)?;
    m.add_function(wrap_pyfunction!(manhattan_distance, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_logits, m)?)?;
    m.add_function(wrap_pyfunction!(vcd_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(m3id_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(m3id_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(token_hash, m)?)?;
    Ok(())
}
