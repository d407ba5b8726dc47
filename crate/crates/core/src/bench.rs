//! Latency and compute-accounting benchmark across decoding methods.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adaptive::DecodeParams;
use crate::config::ModelConfig;
use crate::decode::{decode, expected_counters, DecodeRequest, ForwardStats, Method};
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::weights::ModelWeights;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub methods: Vec<Method>,
    pub tokens: usize,
    pub repeats: usize,
    pub params: DecodeParams,
    /// Run each method on its own thread. Off by default to keep timings clean.
    pub parallel: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Counters of the last run, with wall times replaced by the median over timed runs.
    pub stats: ForwardStats,
    pub wall_ns_median: u64,
    /// Every run including the discarded warm-up, in order.
    pub wall_ns_runs: Vec<u64>,
    pub token_hash: String,
    pub counters_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: ModelConfig,
    pub prompt_len: usize,
    pub tokens: usize,
    pub repeats: usize,
    pub params: DecodeParams,
    pub methods: Vec<MethodReport>,
    /// Median wall time of each method divided by regular decoding's.
    pub ratios: BTreeMap<String, f64>,
}

impl BenchReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn median(xs: &[u64]) -> u64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

struct Runs {
    walls: Vec<u64>,
    hashes: Vec<String>,
    last: ForwardStats,
}

fn run_method(
    weights: &ModelWeights,
    prompt: &Prompt,
    method: Method,
    opts: &BenchOptions,
    runs: &mut Runs,
) -> Result<()> {
    let req = DecodeRequest::new(method, opts.params, opts.tokens).without_stop();
    let out = decode(weights, prompt, &req)?;
    runs.walls.push(out.stats.wall_ns_total);
    runs.hashes.push(out.token_hash());
    runs.last = out.stats;
    Ok(())
}

/// Runs every method `repeats` times, drops the first run of each as warm-up and reports
/// median wall times, exact forward counters and ratios against regular decoding.
///
/// Regular decoding is added if missing. Fails if a counter deviates from its closed form or
/// if repetitions of one method produce different tokens.
pub fn run_bench(weights: &ModelWeights, prompt: &Prompt, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.repeats < 3 {
        return Err(Error::InvalidParam(format!("repeats must be at least 3, got {}", opts.repeats)));
    }
    let mut methods = opts.methods.clone();
    if !methods.contains(&Method::Regular) {
        methods.insert(0, Method::Regular);
    }
    let mut all: Vec<Runs> = methods
        .iter()
        .map(|_| Runs { walls: Vec::new(), hashes: Vec::new(), last: ForwardStats::default() })
        .collect();

    if opts.parallel {
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = methods
                .iter()
                .zip(all.iter_mut())
                .map(|(m, runs)| {
                    s.spawn(move || -> Result<()> {
                        for _ in 0..opts.repeats {
                            run_method(weights, prompt, *m, opts, runs)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("bench thread panicked")?;
            }
            Ok(())
        })?;
    } else {
        // Interleave methods within each repetition so slow drift hits all of them alike.
        for _ in 0..opts.repeats {
            for (m, runs) in methods.iter().zip(all.iter_mut()) {
                run_method(weights, prompt, *m, opts, runs)?;
            }
        }
    }

    let mut reports = Vec::with_capacity(methods.len());
    for (m, runs) in methods.iter().zip(all) {
        if runs.hashes.iter().any(|h| *h != runs.hashes[0]) {
            return Err(Error::BenchInvariant(format!(
                "{} produced different tokens across repetitions",
                m.name()
            )));
        }
        let s = &runs.last;
        let expected = expected_counters(m, s.prompt_len, s.generated);
        let got = (s.full_forwards, s.extra_mha_evals, s.extra_mlp_evals);
        if got != expected {
            return Err(Error::BenchInvariant(format!(
                "{}: counters {got:?} differ from expected {expected:?}",
                m.name()
            )));
        }
        let wall_ns_median = median(&runs.walls[1..]);
        let mut stats = runs.last.clone();
        stats.wall_ns_total = wall_ns_median;
        reports.push(MethodReport {
            method: m.name().to_string(),
            stats,
            wall_ns_median,
            wall_ns_runs: runs.walls,
            token_hash: runs.hashes[0].clone(),
            counters_ok: true,
        });
    }

    let regular = reports
        .iter()
        .find(|r| r.method == "regular")
        .map(|r| r.wall_ns_median)
        .expect("regular always present");
    let ratios = reports
        .iter()
        .map(|r| {
            let ratio = if r.method == "regular" { 1.0 } else { r.wall_ns_median as f64 / regular as f64 };
            (r.method.clone(), ratio)
        })
        .collect();

    Ok(BenchReport {
        config: weights.config.clone(),
        prompt_len: prompt.len(),
        tokens: opts.tokens,
        repeats: opts.repeats,
        params: opts.params,
        methods: reports,
        ratios,
    })
}
