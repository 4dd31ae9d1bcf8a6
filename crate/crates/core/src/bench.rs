//! Generation-phase latency of full versus pruned feedforward blocks.
//!
//! One repeat runs the prompt through the full block once, then generates `G`
//! tokens one at a time. The full method uses the original block; GRIFFIN
//! selects experts from the prompt activations and runs the reduced block,
//! with selection counted in its generation time; magnitude uses a reduced
//! block prepared ahead of time.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::magnitude_experts;
use crate::error::{GriffinError, Result};
use crate::ffn::{ff1_forward, ff2_forward, ff_forward, ActivationKind, FFBlock, Gate};
use crate::flocking::fmt_sig;
use crate::gate::{compute_statistic, prune_block, pruned_forward, select_experts, SparsityConfig};
use crate::io::write_atomic;
use crate::linalg::{Matrix, Vector};
use crate::rng::{stream_rng, Stream};

pub const CSV_HEADER: &str = "method,P,G,D,D_FF,sparsity,prompt_s,gen_s,speedup";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchScenario {
    pub prompt_len: usize,
    pub gen_len: usize,
    pub dim: usize,
    pub d_ff: usize,
    pub sparsities: Vec<f64>,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
    pub activation: ActivationKind,
    pub glu: bool,
    pub seed: u64,
}

impl Default for BenchScenario {
    /// 2048+128 at 7B-class widths, 50% and 75% sparsity.
    fn default() -> Self {
        Self {
            prompt_len: 2048,
            gen_len: 128,
            dim: 4096,
            d_ff: 11008,
            sparsities: vec![0.5, 0.75],
            repeats: 3,
            warmup: 1,
            threads: 1,
            activation: ActivationKind::Silu,
            glu: false,
            seed: 0,
        }
    }
}

impl BenchScenario {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            return Err(GriffinError::invalid(format!("repeats must be at least 3, got {}", self.repeats)));
        }
        if self.warmup < 1 {
            return Err(GriffinError::invalid("warmup must be at least 1"));
        }
        if self.prompt_len == 0 || self.gen_len == 0 || self.dim == 0 || self.d_ff == 0 {
            return Err(GriffinError::invalid("P, G, D and D_FF must all be positive"));
        }
        if self.threads == 0 {
            return Err(GriffinError::invalid("threads must be positive"));
        }
        for &s in &self.sparsities {
            SparsityConfig::new(s)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub dim: usize,
    pub d_ff: usize,
    pub sparsity: f64,
    pub threads: usize,
    /// Median prompt-phase time.
    pub prompt_s: f64,
    /// Median generation-phase time.
    pub gen_s: f64,
    pub gen_mean_s: f64,
    pub gen_std_s: f64,
    /// Median expert-selection time, already included in `gen_s`.
    pub selection_s: f64,
    pub speedup: f64,
}

/// Multiply-add FLOPs of `tokens` forward passes through a block of width
/// `d_ff`.
pub fn ff_flops(tokens: usize, dim: usize, d_ff: usize, glu: bool) -> u64 {
    let up = if glu { 2 } else { 1 };
    tokens as u64 * (2 * dim as u64 * d_ff as u64 * up + 2 * d_ff as u64 * dim as u64)
}

/// Random block with entries scaled by fan-in.
pub fn random_block(scenario: &BenchScenario) -> Result<FFBlock<f32>> {
    let (d, f) = (scenario.dim, scenario.d_ff);
    let mut rng = stream_rng(scenario.seed, Stream::BenchWeights, 0);
    let mut mat = |rows: usize, cols: usize| {
        let a = 1.0 / (cols as f32).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
    };
    let w1 = mat(f, d)?;
    let gate = if scenario.glu {
        Some(Gate {
            wg: mat(f, d)?,
            bg: Vector::zeros(f),
        })
    } else {
        None
    };
    let w2 = mat(d, f)?;
    FFBlock::new(w1, Vector::zeros(f), gate, w2, Vector::zeros(d), scenario.activation)
}

fn inputs(scenario: &BenchScenario) -> Result<(Matrix<f32>, Vec<Matrix<f32>>)> {
    let mut rng = stream_rng(scenario.seed, Stream::BenchInputs, 0);
    let d = scenario.dim;
    let prompt = Matrix::from_fn(scenario.prompt_len, d, |_, _| rng.random_range(-1.0f32..1.0))?;
    let gen = (0..scenario.gen_len)
        .map(|_| Matrix::from_fn(1, d, |_, _| rng.random_range(-1.0f32..1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok((prompt, gen))
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, f64)> {
    let start = Instant::now();
    let r = f()?;
    Ok((r, start.elapsed().as_secs_f64()))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

#[derive(Default)]
struct Samples {
    prompt: Vec<f64>,
    gen: Vec<f64>,
    selection: Vec<f64>,
}

/// Times full, GRIFFIN and magnitude generation for every sparsity in the
/// scenario. The full record comes first, then GRIFFIN and magnitude per
/// sparsity.
pub fn bench_generation(scenario: &BenchScenario, block: &FFBlock<f32>) -> Result<Vec<BenchRecord>> {
    scenario.validate()?;
    if block.dim() != scenario.dim || block.d_ff() != scenario.d_ff {
        return Err(GriffinError::shape(
            "bench block",
            format!("{}x{}", scenario.d_ff, scenario.dim),
            format!("{}x{}", block.d_ff(), block.dim()),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(scenario.threads)
        .build()
        .map_err(|e| GriffinError::invalid(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run(scenario, block))
}

fn run(scenario: &BenchScenario, block: &FFBlock<f32>) -> Result<Vec<BenchRecord>> {
    let (prompt, gen) = inputs(scenario)?;
    let configs = scenario
        .sparsities
        .iter()
        .map(|&s| SparsityConfig::new(s))
        .collect::<Result<Vec<_>>>()?;
    let magnitude = configs
        .iter()
        .map(|&cfg| prune_block(block, &magnitude_experts(block, cfg)?))
        .collect::<Result<Vec<_>>>()?;

    let mut full = Samples::default();
    let mut griffin: Vec<Samples> = configs.iter().map(|_| Samples::default()).collect();
    let mut mag: Vec<Samples> = configs.iter().map(|_| Samples::default()).collect();

    for rep in 0..scenario.warmup + scenario.repeats {
        let keep = rep >= scenario.warmup;
        let (acts, prompt_s) = timed(|| {
            let acts = ff1_forward(block, &prompt)?;
            std::hint::black_box(ff2_forward(block, &acts.z)?);
            Ok(acts)
        })?;
        // Rotating the order keeps drift in machine state from favouring
        // whichever method always runs first.
        let jobs = configs.len() * 2 + 1;
        for slot in 0..jobs {
            let job = (slot + rep) % jobs;
            if job == 0 {
                let ((), gen_s) = timed(|| {
                    for x in &gen {
                        std::hint::black_box(ff_forward(block, x)?);
                    }
                    Ok(())
                })?;
                if keep {
                    full.prompt.push(prompt_s);
                    full.gen.push(gen_s);
                }
                continue;
            }
            let i = (job - 1) / 2;
            if (job - 1) % 2 == 0 {
                let (pruned, sel_s) = timed(|| {
                    let experts = select_experts(&compute_statistic(&acts)?, configs[i])?;
                    prune_block(block, &experts)
                })?;
                let ((), run_s) = timed(|| {
                    for x in &gen {
                        std::hint::black_box(pruned_forward(&pruned, x)?);
                    }
                    Ok(())
                })?;
                if keep {
                    griffin[i].prompt.push(prompt_s);
                    griffin[i].gen.push(sel_s + run_s);
                    griffin[i].selection.push(sel_s);
                }
            } else {
                let ((), mag_s) = timed(|| {
                    for x in &gen {
                        std::hint::black_box(pruned_forward(&magnitude[i], x)?);
                    }
                    Ok(())
                })?;
                if keep {
                    mag[i].prompt.push(prompt_s);
                    mag[i].gen.push(mag_s);
                    mag[i].selection.push(0.0);
                }
            }
        }
    }

    let full_median = median(&full.gen);
    let record = |method: &str, sparsity: f64, s: &Samples| {
        let gen_s = median(&s.gen);
        let (gen_mean_s, gen_std_s) = mean_std(&s.gen);
        BenchRecord {
            method: method.to_string(),
            prompt_len: scenario.prompt_len,
            gen_len: scenario.gen_len,
            dim: scenario.dim,
            d_ff: scenario.d_ff,
            sparsity,
            threads: scenario.threads,
            prompt_s: median(&s.prompt),
            gen_s,
            gen_mean_s,
            gen_std_s,
            selection_s: if s.selection.is_empty() { 0.0 } else { median(&s.selection) },
            speedup: full_median / gen_s,
        }
    };
    let mut out = vec![record("full", 0.0, &full)];
    for (i, &s) in scenario.sparsities.iter().enumerate() {
        out.push(record("griffin", s, &griffin[i]));
        out.push(record("magnitude", s, &mag[i]));
    }
    Ok(out)
}

pub fn emit_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            r.method.clone(),
            r.prompt_len.to_string(),
            r.gen_len.to_string(),
            r.dim.to_string(),
            r.d_ff.to_string(),
            fmt_sig(r.sparsity, 6),
            fmt_sig(r.prompt_s, 6),
            fmt_sig(r.gen_s, 6),
            fmt_sig(r.speedup, 6),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    write_atomic(path, emit_csv(records).as_bytes())
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    #[serde(rename = "P")]
    pub prompt_len: usize,
    #[serde(rename = "G")]
    pub gen_len: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "D_FF")]
    pub d_ff: usize,
    pub sparsity: f64,
    pub prompt_s: f64,
    pub gen_s: f64,
    pub speedup: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(GriffinError::Parse {
            line: 1,
            message: format!("unexpected header '{}'", header.join(",")),
        });
    }
    reader.deserialize().map(|r| r.map_err(GriffinError::from)).collect()
}
