//! Command-line harness: model files, decoding, benchmarking and the entropy sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tedecode::alloc::CountingAlloc;
use tedecode::bench::{run_bench, BenchOptions};
use tedecode::format::{read_model, write_model};
use tedecode::sweep::{describe_trend, entropy_sweep, to_csv, SweepOptions};
use tedecode::tver::DEFAULT_VISUAL_NOISE;
use tedecode::{
    decode, DecodeParams, DecodeRequest, EnhanceOptions, EnhancementStrategy, EntropyMode, Method,
    ModelConfig, ModelWeights, PromptSpec, SamplingMode, TeHeadInput,
};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "tedecode", version, about = "Textual-enhancement contrastive decoding harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded model file
    InitModel(InitArgs),
    /// Generate tokens with one method and optionally write a JSONL trace
    Decode(DecodeArgs),
    /// Time several methods and check their forward counters
    Bench(BenchArgs),
    /// Report attention entropies as the visual block gets noisier
    EntropySweep(SweepArgs),
    /// Run the built-in consistency checks
    Selftest,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    d_model: usize,
    #[arg(long, default_value_t = 1024)]
    d_mlp: usize,
    #[arg(long, default_value_t = 1024)]
    vocab: usize,
    #[arg(long, default_value_t = 1024)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 0)]
    te_layer: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeModeArg {
    Alg1,
    Eq17,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Tver,
    ZeroVisual,
    NoiseVisual,
    DoubleTextual,
    SumRatio,
}

#[derive(Clone, Copy, ValueEnum)]
enum EntropyModeArg {
    Resoftmax,
    Renormalize,
}

impl From<EntropyModeArg> for EntropyMode {
    fn from(m: EntropyModeArg) -> Self {
        match m {
            EntropyModeArg::Resoftmax => EntropyMode::Resoftmax,
            EntropyModeArg::Renormalize => EntropyMode::Renormalize,
        }
    }
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Model file written by `init-model`
    #[arg(long)]
    model: PathBuf,
    /// Prompt JSON file; defaults to the 32 + 64 + 8 token synthetic prompt
    #[arg(long)]
    prompt: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long, default_value_t = 3.0)]
    alpha1: f32,
    #[arg(long, default_value_t = 1.0)]
    alpha2: f32,
    #[arg(long, default_value_t = 0.2)]
    gamma: f32,
    #[arg(long, default_value_t = 0.1)]
    beta: f32,
    #[arg(long)]
    te_layer: Option<usize>,
    #[arg(long, value_enum, default_value = "alg1")]
    te_mode: TeModeArg,
    #[arg(long, value_enum, default_value = "tver")]
    strategy: StrategyArg,
    /// Noise std for `--strategy noise-visual`
    #[arg(long, default_value_t = DEFAULT_VISUAL_NOISE)]
    noise_sigma: f32,
    #[arg(long, value_enum, default_value = "resoftmax")]
    entropy_mode: EntropyModeArg,
    /// Keep every head at the intervention layer (diagnostic)
    #[arg(long)]
    keep_all_heads: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f32,
    #[arg(long)]
    greedy: bool,
    /// Contrast strength of the distorted-visual baseline
    #[arg(long, default_value_t = tedecode::baselines::VCD_DEFAULT_ALPHA)]
    vcd_alpha: f32,
    /// Total noise std of the distorted-visual baseline
    #[arg(long, default_value_t = tedecode::baselines::VCD_DEFAULT_NOISE)]
    noise_std: f32,
    #[arg(long, default_value_t = tedecode::baselines::VCD_DEFAULT_STEPS)]
    noise_steps: usize,
    /// Growth rate of the visual-free baseline's contrast coefficient
    #[arg(long, default_value_t = tedecode::baselines::M3ID_DEFAULT_LAMBDA)]
    lambda: f32,
}

impl ParamArgs {
    fn params(&self) -> DecodeParams {
        DecodeParams {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            gamma: self.gamma,
            beta: self.beta,
            temperature: self.temperature,
            sampling: if self.greedy { SamplingMode::Greedy } else { SamplingMode::Sample },
            seed: self.seed,
        }
    }

    fn method(&self, name: &str) -> Result<Method> {
        Ok(match name {
            "regular" => Method::Regular,
            "only" => Method::Only(EnhanceOptions {
                te_layer: self.te_layer,
                te_mode: match self.te_mode {
                    TeModeArg::Alg1 => TeHeadInput::Alg1,
                    TeModeArg::Eq17 => TeHeadInput::Eq17,
                },
                strategy: match self.strategy {
                    StrategyArg::Tver => EnhancementStrategy::TverMask,
                    StrategyArg::ZeroVisual => EnhancementStrategy::ZeroVisual,
                    StrategyArg::NoiseVisual => EnhancementStrategy::NoiseVisual { sigma: self.noise_sigma },
                    StrategyArg::DoubleTextual => EnhancementStrategy::DoubleTextual,
                    StrategyArg::SumRatio => EnhancementStrategy::SumRatioMask,
                },
                entropy_mode: self.entropy_mode.into(),
                keep_all_heads: self.keep_all_heads,
            }),
            "vcd" => Method::Vcd { alpha: self.vcd_alpha, noise_std: self.noise_std, steps: self.noise_steps },
            "m3id" => Method::M3id { lambda: self.lambda },
            other => bail!("unknown method {other:?}; expected regular, only, vcd or m3id"),
        })
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "only")]
    method: String,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 128)]
    max_tokens: usize,
    /// JSONL trace output, one record per generated token
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the generated token ids as a JSON array here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep generating after the end-of-sequence token
    #[arg(long)]
    ignore_eos: bool,
    /// Record per-token wall time in the trace
    #[arg(long)]
    trace_timing: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "regular,only,vcd,m3id")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 128)]
    tokens: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    params: ParamArgs,
    /// Report path; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
    noise_levels: Vec<f32>,
    #[arg(long, default_value_t = 4)]
    samples: usize,
    #[arg(long)]
    te_layer: Option<usize>,
    #[arg(long, value_enum, default_value = "resoftmax")]
    entropy_mode: EntropyModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_inputs(input: &InputArgs) -> Result<(ModelWeights, tedecode::Prompt)> {
    let weights = read_model(&input.model)
        .with_context(|| format!("loading model {}", input.model.display()))?;
    let spec = match &input.prompt {
        Some(p) => PromptSpec::from_file(p).with_context(|| format!("loading prompt {}", p.display()))?,
        None => PromptSpec::reference(weights.config.vocab_size),
    };
    let prompt = spec.materialize(&weights)?;
    Ok((weights, prompt))
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_init_model(a: InitArgs) -> Result<()> {
    let mut cfg = ModelConfig::new(a.layers, a.heads, a.d_model, a.d_mlp, a.vocab, a.max_seq_len);
    cfg.te_layer = a.te_layer;
    cfg.rng_seed = a.seed;
    let weights = ModelWeights::init_seeded(&cfg, a.seed)?;
    write_model(&weights, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} ({} parameters)", a.out.display(), weights.param_count());
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let (weights, prompt) = load_inputs(&a.input)?;
    let mut req = DecodeRequest::new(a.params.method(&a.method)?, a.params.params(), a.max_tokens);
    if a.ignore_eos {
        req = req.without_stop();
    }
    req.record_timing = a.trace_timing;
    let out = decode(&weights, &prompt, &req)?;
    if let Some(path) = &a.trace {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        out.write_trace(&mut w)?;
        w.flush()?;
    }
    write_or_print(a.out.as_ref(), &format!("{}\n", serde_json::to_string(&out.tokens)?))?;
    let s = &out.stats;
    eprintln!(
        "{}: {} tokens, {} full forwards, {} extra attention-output evals, {:.3} ms/token",
        a.method,
        s.generated,
        s.full_forwards,
        s.extra_mha_evals,
        s.wall_ns_per_token / 1e6
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let (weights, prompt) = load_inputs(&a.input)?;
    let methods = a.methods.iter().map(|m| a.params.method(m)).collect::<Result<Vec<_>>>()?;
    let opts = BenchOptions {
        methods,
        tokens: a.tokens,
        repeats: a.repeats,
        params: a.params.params(),
        parallel: a.parallel,
    };
    let report = run_bench(&weights, &prompt, &opts)?;
    for m in &report.methods {
        eprintln!(
            "{:>8}: median {:>8.1} ms  x{:.3}  full={} extra_mha={} extra_mlp={}",
            m.method,
            m.wall_ns_median as f64 / 1e6,
            report.ratios[&m.method],
            m.stats.full_forwards,
            m.stats.extra_mha_evals,
            m.stats.extra_mlp_evals
        );
    }
    write_or_print(a.out.as_ref(), &format!("{}\n", serde_json::to_string_pretty(&report)?))
}

fn cmd_entropy_sweep(a: SweepArgs) -> Result<()> {
    let (weights, prompt) = load_inputs(&a.input)?;
    let opts = SweepOptions {
        levels: a.noise_levels,
        samples: a.samples,
        te_layer: a.te_layer.unwrap_or(weights.config.te_layer),
        entropy_mode: a.entropy_mode.into(),
        seed: a.seed,
    };
    let rows = entropy_sweep(&weights, &prompt, &opts)?;
    write_or_print(a.out.as_ref(), &to_csv(&rows))?;
    eprintln!("{}", describe_trend(&rows));
    Ok(())
}

fn cmd_selftest() -> Result<bool> {
    let checks = tedecode::selftest::run_selftest()?;
    let mut all = true;
    for c in &checks {
        all &= c.passed;
        println!("[{}] {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::InitModel(a) => cmd_init_model(a).map(|_| true),
        Command::Decode(a) => cmd_decode(a).map(|_| true),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
        Command::EntropySweep(a) => cmd_entropy_sweep(a).map(|_| true),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
