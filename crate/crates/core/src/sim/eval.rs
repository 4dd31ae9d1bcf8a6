use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{magnitude_experts, sampled_experts, wanda_prune_with, SelectionMode, WandaOptions};
use crate::error::{GriffinError, Result};
use crate::gate::{aggregate_statistics, compute_statistic, prune_block, NeuronStatistic, SparsityConfig};
use crate::linalg::{Matrix, Real, Vector};
use crate::rng::{stream_rng, Stream};
use crate::sim::model::{full_logits, phase_logits, prompt_trace, PhaseBlock, SimulationPartition, ToyModel};

/// Which blocks run during generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Full,
    Griffin,
    Magnitude,
    Wanda,
    /// Experts drawn by weighted sampling from the prompt statistic.
    Sample,
    /// Half the experts by top-k, half by weighted sampling.
    TopkSample,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Full,
        Method::Griffin,
        Method::Magnitude,
        Method::Wanda,
        Method::Sample,
        Method::TopkSample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Griffin => "griffin",
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::Sample => "sample",
            Method::TopkSample => "topk-sample",
        }
    }

    pub fn selection_mode(self) -> Option<SelectionMode> {
        match self {
            Method::Griffin => Some(SelectionMode::TopK),
            Method::Sample => Some(SelectionMode::WeightedSampling),
            Method::TopkSample => Some(SelectionMode::HalfTopKHalfSampling),
            _ => None,
        }
    }

    /// True when the generation blocks depend on the prompt.
    pub fn is_adaptive(self) -> bool {
        !matches!(self, Method::Full | Method::Magnitude)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GriffinError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GriffinError::invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub sparsity: SparsityConfig,
    pub wanda: WandaOptions,
    /// Re-select experts from all tokens seen so far every this many
    /// generated positions. Off by default: experts stay fixed after the
    /// prompt.
    pub reselect_every: Option<usize>,
    /// Seed for the sampling methods.
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(sparsity: SparsityConfig) -> Self {
        Self {
            sparsity,
            wanda: WandaOptions::default(),
            reselect_every: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityPair {
    pub full: f64,
    pub method: f64,
}

/// Running sum of next-token cross-entropy (natural log).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CrossEntropy {
    pub total: f64,
    pub count: usize,
}

impl CrossEntropy {
    /// Adds row `i` of `logits` scored against `targets[i]`.
    pub fn add<T: Real>(&mut self, logits: &Matrix<T>, targets: &[u32]) -> Result<()> {
        if logits.rows() != targets.len() {
            return Err(GriffinError::shape("cross-entropy targets", logits.rows(), targets.len()));
        }
        for (row, &t) in logits.row_iter().zip(targets) {
            let t = t as usize;
            if t >= row.len() {
                return Err(GriffinError::invalid(format!(
                    "target {t} is outside the vocabulary of {}",
                    row.len()
                )));
            }
            let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v.widen() - max).exp()).sum::<f64>().ln();
            self.total += lse - row[t].widen();
        }
        self.count += targets.len();
        Ok(())
    }

    pub fn merge(&mut self, other: CrossEntropy) {
        self.total += other.total;
        self.count += other.count;
    }

    pub fn perplexity(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(GriffinError::invalid("perplexity over zero predictions"));
        }
        let ppl = (self.total / self.count as f64).exp();
        if !ppl.is_finite() {
            return Err(GriffinError::NonFinite {
                context: "perplexity",
                index: 0,
            });
        }
        Ok(ppl)
    }
}

fn blocks_from_statistics<T: Real, R: Rng + ?Sized>(
    model: &ToyModel<T>,
    stats: &[NeuronStatistic],
    mode: SelectionMode,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<Vec<PhaseBlock<T>>> {
    model
        .layers()
        .iter()
        .zip(stats)
        .map(|(layer, st)| {
            let experts = sampled_experts(st, cfg.sparsity, mode, rng)?;
            Ok(PhaseBlock::Pruned(prune_block(&layer.block, &experts)?))
        })
        .collect()
}

/// Per-layer prompt statistics from a full-model pass.
pub fn prompt_statistics<T: Real>(model: &ToyModel<T>, prompt: &[u32]) -> Result<Vec<NeuronStatistic>> {
    prompt_trace(model, prompt)?
        .iter()
        .map(|t| compute_statistic(&t.acts))
        .collect()
}

/// Generation blocks chosen by `method` from `prompt`.
pub fn select_generation_blocks<T: Real, R: Rng + ?Sized>(
    model: &ToyModel<T>,
    prompt: &[u32],
    method: Method,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<Vec<PhaseBlock<T>>> {
    match method {
        Method::Full => Ok(model
            .layers()
            .iter()
            .map(|l| PhaseBlock::Masked(l.block.clone()))
            .collect()),
        Method::Magnitude => model
            .layers()
            .iter()
            .map(|l| {
                let experts = magnitude_experts(&l.block, cfg.sparsity)?;
                Ok(PhaseBlock::Pruned(prune_block(&l.block, &experts)?))
            })
            .collect(),
        Method::Wanda => {
            let traces = prompt_trace(model, prompt)?;
            model
                .layers()
                .iter()
                .zip(&traces)
                .map(|(l, t)| {
                    let mask = wanda_prune_with(&l.block, &t.input, cfg.sparsity.ff_sparsity(), cfg.wanda)?;
                    Ok(PhaseBlock::Masked(mask.apply(&l.block)?))
                })
                .collect()
        }
        Method::Griffin | Method::Sample | Method::TopkSample => {
            let mode = method.selection_mode().expect("statistic-based method");
            let stats = prompt_statistics(model, prompt)?;
            blocks_from_statistics(model, &stats, mode, cfg, rng)
        }
    }
}

fn check_stream(tokens: &[u32], part: SimulationPartition) -> Result<()> {
    if tokens.len() != part.total() + 1 {
        return Err(GriffinError::invalid(format!(
            "P={} G={} needs {} tokens (inputs plus the final target), got {}",
            part.prompt_len(),
            part.gen_len(),
            part.total() + 1,
            tokens.len()
        )));
    }
    Ok(())
}

/// Cross-entropy of the method over the generation positions, reusing
/// `full` (the full-model logits for all inputs) where the method is `Full`.
fn generation_cross_entropy<T: Real, R: Rng + ?Sized>(
    model: &ToyModel<T>,
    tokens: &[u32],
    part: SimulationPartition,
    method: Method,
    cfg: &EvalConfig,
    full: &Matrix<T>,
    rng: &mut R,
) -> Result<CrossEntropy> {
    let (p, s) = (part.prompt_len(), part.total());
    let mut ce = CrossEntropy::default();
    if method == Method::Full {
        ce.add(&full.slice_rows(p, s)?, &tokens[p + 1..=s])?;
        return Ok(ce);
    }
    let step = match cfg.reselect_every {
        Some(0) => return Err(GriffinError::invalid("reselect_every must be positive")),
        Some(r) if method.is_adaptive() => r,
        _ => part.gen_len(),
    };
    let mut start = p;
    while start < s {
        let end = (start + step).min(s);
        let blocks = select_generation_blocks(model, &tokens[..start], method, cfg, rng)?;
        let logits = phase_logits(model, &tokens[start..end], &blocks)?;
        ce.add(&logits, &tokens[start + 1..=end])?;
        start = end;
    }
    Ok(ce)
}

/// Perplexity over the generation partition for the full model and for
/// `method`, on the same token stream.
///
/// `tokens` holds `P + G + 1` ids: the `P + G` model inputs and the target of
/// the last one. Position `t` predicts token `t + 1`; only positions
/// `P..P+G` are scored.
pub fn generation_perplexity<T: Real>(
    model: &ToyModel<T>,
    tokens: &[u32],
    partition: SimulationPartition,
    method: Method,
    cfg: &EvalConfig,
) -> Result<PerplexityPair> {
    let (full, ce) = sequence_cross_entropy(model, tokens, partition, method, cfg, 0)?;
    Ok(PerplexityPair {
        full: full.perplexity()?,
        method: ce.perplexity()?,
    })
}

fn sequence_cross_entropy<T: Real>(
    model: &ToyModel<T>,
    tokens: &[u32],
    part: SimulationPartition,
    method: Method,
    cfg: &EvalConfig,
    index: u64,
) -> Result<(CrossEntropy, CrossEntropy)> {
    check_stream(tokens, part)?;
    model.check_tokens(tokens)?;
    let full_all = full_logits(model, &tokens[..part.total()])?;
    let mut full = CrossEntropy::default();
    full.add(&full_all.slice_rows(part.prompt_len(), part.total())?, &tokens[part.prompt_len() + 1..])?;
    let mut rng = stream_rng(cfg.seed, Stream::Sampling, index);
    let ce = generation_cross_entropy(model, tokens, part, method, cfg, &full_all, &mut rng)?;
    Ok((full, ce))
}

/// Pooled perplexity over many sequences, each with its own expert selection.
pub fn corpus_perplexity<T: Real>(
    model: &ToyModel<T>,
    sequences: &[Vec<u32>],
    partition: SimulationPartition,
    method: Method,
    cfg: &EvalConfig,
) -> Result<PerplexityPair> {
    let parts = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| sequence_cross_entropy(model, seq, partition, method, cfg, i as u64))
        .collect::<Result<Vec<_>>>()?;
    pool(parts)
}

fn pool(parts: Vec<(CrossEntropy, CrossEntropy)>) -> Result<PerplexityPair> {
    let (mut full, mut method) = (CrossEntropy::default(), CrossEntropy::default());
    for (f, m) in parts {
        full.merge(f);
        method.merge(m);
    }
    Ok(PerplexityPair {
        full: full.perplexity()?,
        method: method.perplexity()?,
    })
}

/// Final-position logits when every token but the last is the prompt and
/// the model runs one generation step.
pub fn classification_as_generation<T: Real>(
    model: &ToyModel<T>,
    tokens: &[u32],
    method: Method,
    cfg: &EvalConfig,
) -> Result<Vector<T>> {
    if tokens.len() < 2 {
        return Err(GriffinError::invalid(format!(
            "classification needs at least 2 tokens, got {}",
            tokens.len()
        )));
    }
    model.check_tokens(tokens)?;
    let s = tokens.len();
    let mut rng = stream_rng(cfg.seed, Stream::Sampling, 0);
    let logits = if method == Method::Full {
        full_logits(model, tokens)?.slice_rows(s - 1, s)?
    } else {
        let blocks = select_generation_blocks(model, &tokens[..s - 1], method, cfg, &mut rng)?;
        phase_logits(model, &tokens[s - 1..], &blocks)?
    };
    Vector::new(logits.into_vec())
}

/// How prompts share one expert set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Every sequence selects from its own prompt.
    PerSequence,
    /// Consecutive groups of `B` sequences share experts selected from their
    /// aggregated statistic.
    Batch(usize),
    /// One expert set from the aggregated statistic of every prompt.
    Global,
}

/// Top-k selection with experts shared according to `batching`.
pub fn batched_perplexity<T: Real>(
    model: &ToyModel<T>,
    sequences: &[Vec<u32>],
    partition: SimulationPartition,
    batching: Batching,
    cfg: &EvalConfig,
) -> Result<PerplexityPair> {
    if sequences.is_empty() {
        return Err(GriffinError::invalid("no sequences to evaluate"));
    }
    for seq in sequences {
        check_stream(seq, partition)?;
        model.check_tokens(seq)?;
    }
    let p = partition.prompt_len();
    let stats = sequences
        .par_iter()
        .map(|seq| prompt_statistics(model, &seq[..p]))
        .collect::<Result<Vec<_>>>()?;
    let group = match batching {
        Batching::PerSequence => 1,
        Batching::Batch(0) => return Err(GriffinError::invalid("batch size must be positive")),
        Batching::Batch(b) => b,
        Batching::Global => sequences.len(),
    };
    let mut shared = Vec::new();
    for (g, chunk) in stats.chunks(group).enumerate() {
        let per_layer = (0..model.n_layers())
            .map(|l| {
                let layer_stats: Vec<_> = chunk.iter().map(|s| s[l].clone()).collect();
                aggregate_statistics(&layer_stats)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = stream_rng(cfg.seed, Stream::Sampling, g as u64);
        shared.push(blocks_from_statistics(model, &per_layer, SelectionMode::TopK, cfg, &mut rng)?);
    }
    let parts = sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let s = partition.total();
            let full_all = full_logits(model, &seq[..s])?;
            let mut full = CrossEntropy::default();
            full.add(&full_all.slice_rows(p, s)?, &seq[p + 1..])?;
            let mut method = CrossEntropy::default();
            method.add(&phase_logits(model, &seq[p..s], &shared[i / group])?, &seq[p + 1..])?;
            Ok((full, method))
        })
        .collect::<Result<Vec<_>>>()?;
    pool(parts)
}
