//! Comparison methods for expert selection.
//!
//! * Magnitude: static neuron pruning by row norms of `W1` (times row norms
//!   of `Wg` for gated blocks). Input independent.
//! * Adaptive Wanda: unstructured, per-prompt pruning. Each weight is scored
//!   by `|W_ij| · ‖X[·, j]‖₂` where `X` is the matrix's input over the
//!   prompt, and the top fraction of every output row is kept.
//! * Sampling: experts drawn from the prompt statistic instead of taking its
//!   top-k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::ffn::{ff1_forward, FFBlock, Gate};
use crate::gate::{select_experts, ExpertSet, NeuronStatistic, SparsityConfig};
use crate::linalg::{column_l2_norms, top_k_indices, top_k_ranked, IndexSet, Matrix, Real, Vector};

/// Per-neuron magnitude score.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeMetric {
    pub scores: Vector<f64>,
}

fn row_norm<T: Real>(row: &[T]) -> f64 {
    row.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt()
}

pub fn magnitude_metric<T: Real>(block: &FFBlock<T>) -> MagnitudeMetric {
    let mut scores: Vec<f64> = block.w1().row_iter().map(row_norm).collect();
    if let Some(g) = block.gate() {
        for (s, r) in scores.iter_mut().zip(g.wg.row_iter()) {
            *s *= row_norm(r);
        }
    }
    MagnitudeMetric {
        scores: Vector::new(scores).expect("norms of finite rows are finite"),
    }
}

/// Top-k neurons by weight magnitude; the same set for every prompt.
pub fn magnitude_experts<T: Real>(block: &FFBlock<T>, cfg: SparsityConfig) -> Result<ExpertSet> {
    let metric = magnitude_metric(block);
    Ok(ExpertSet {
        experts: top_k_indices(&metric.scores, cfg.k(block.d_ff()))?,
        config: cfg,
    })
}

/// Keep/drop flags for one weight matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl RowMask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.keep[i * self.cols..(i + 1) * self.cols]
    }

    pub fn kept_in_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&k| k).count()
    }

    pub fn kept_indices(&self, i: usize) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.keeps(i, j)).collect()
    }

    /// Zeroes the dropped entries; kept entries are copied unchanged.
    pub fn apply<T: Real>(&self, w: &Matrix<T>) -> Result<Matrix<T>> {
        if w.shape() != (self.rows, self.cols) {
            return Err(GriffinError::shape(
                "RowMask::apply",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", w.rows(), w.cols()),
            ));
        }
        let data = w
            .as_slice()
            .iter()
            .zip(&self.keep)
            .map(|(&v, &k)| if k { v } else { T::zero() })
            .collect();
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }
}

/// Number of weights kept per row of a matrix with `cols` columns.
fn wanda_keep(sparsity: f64, cols: usize) -> usize {
    (((1.0 - sparsity) * cols as f64 + 0.5).floor() as usize).min(cols)
}

/// Per-row top fraction of `|W_ij| · input_norm_j`.
fn wanda_row_mask<T: Real>(w: &Matrix<T>, input_norms: &[f64], sparsity: f64) -> RowMask {
    let keep_n = wanda_keep(sparsity, w.cols());
    let mut keep = vec![false; w.rows() * w.cols()];
    let mut scores = vec![0.0f64; w.cols()];
    let mut candidates: Vec<usize> = Vec::with_capacity(w.cols());
    for (i, r) in w.row_iter().enumerate() {
        for ((s, v), n) in scores.iter_mut().zip(r).zip(input_norms) {
            *s = v.widen().abs() * n;
        }
        candidates.clear();
        candidates.extend(0..w.cols());
        for j in top_k_ranked(&scores, &mut candidates, keep_n) {
            keep[i * w.cols() + j] = true;
        }
    }
    RowMask {
        rows: w.rows(),
        cols: w.cols(),
        keep,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WandaOptions {
    /// Also mask the down projection, scored with the prompt's FF activations.
    pub include_w2: bool,
}

impl Default for WandaOptions {
    fn default() -> Self {
        Self { include_w2: true }
    }
}

/// Masks for one block's weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct WandaMask {
    pub w1: RowMask,
    pub wg: Option<RowMask>,
    pub w2: Option<RowMask>,
    pub sparsity: f64,
}

/// JSON export of one masked matrix: for every row, the kept column indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub layer: usize,
    pub matrix: String,
    pub k: usize,
    pub rows: Vec<Vec<usize>>,
}

impl WandaMask {
    /// The block with masked weights. Biases are untouched.
    pub fn apply<T: Real>(&self, block: &FFBlock<T>) -> Result<FFBlock<T>> {
        let gate = match (block.gate(), &self.wg) {
            (Some(g), Some(m)) => Some(Gate {
                wg: m.apply(&g.wg)?,
                bg: g.bg.clone(),
            }),
            (Some(g), None) => Some(g.clone()),
            (None, None) => None,
            (None, Some(_)) => {
                return Err(GriffinError::invalid("gate mask given for a block without a gate"))
            }
        };
        let w2 = match &self.w2 {
            Some(m) => m.apply(block.w2())?,
            None => block.w2().clone(),
        };
        FFBlock::new(
            self.w1.apply(block.w1())?,
            block.b1().clone(),
            gate,
            w2,
            block.b2().clone(),
            block.activation(),
        )
    }

    pub fn records(&self, layer: usize) -> Vec<MaskRecord> {
        let mut out = Vec::new();
        let mut push = |name: &str, m: &RowMask| {
            out.push(MaskRecord {
                layer,
                matrix: name.to_string(),
                k: wanda_keep(self.sparsity, m.cols),
                rows: (0..m.rows).map(|i| m.kept_indices(i)).collect(),
            });
        };
        push("w1", &self.w1);
        if let Some(m) = &self.wg {
            push("wg", m);
        }
        if let Some(m) = &self.w2 {
            push("w2", m);
        }
        out
    }
}

/// Adaptive Wanda with default options (all three matrices masked).
pub fn wanda_prune<T: Real>(block: &FFBlock<T>, prompt: &Matrix<T>, sparsity: f64) -> Result<WandaMask> {
    wanda_prune_with(block, prompt, sparsity, WandaOptions::default())
}

/// `prompt` is the block's input over the prompt (S × D).
pub fn wanda_prune_with<T: Real>(
    block: &FFBlock<T>,
    prompt: &Matrix<T>,
    sparsity: f64,
    opts: WandaOptions,
) -> Result<WandaMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(GriffinError::invalid(format!(
            "wanda sparsity must lie in [0, 1), got {sparsity}"
        )));
    }
    if prompt.rows() == 0 {
        return Err(GriffinError::invalid("wanda needs a non-empty prompt"));
    }
    if prompt.cols() != block.dim() {
        return Err(GriffinError::shape("wanda_prune prompt", block.dim(), prompt.cols()));
    }
    let x_norms = column_l2_norms(prompt);
    let w1 = wanda_row_mask(block.w1(), x_norms.as_slice(), sparsity);
    let wg = block
        .gate()
        .map(|g| wanda_row_mask(&g.wg, x_norms.as_slice(), sparsity));
    let w2 = if opts.include_w2 {
        let acts = ff1_forward(block, prompt)?;
        let z_norms = column_l2_norms(&acts.z);
        Some(wanda_row_mask(block.w2(), z_norms.as_slice(), sparsity))
    } else {
        None
    };
    Ok(WandaMask { w1, wg, w2, sparsity })
}

/// How experts are drawn from a prompt statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    TopK,
    /// `k` draws without replacement, probability proportional to `s`.
    WeightedSampling,
    /// `⌈k/2⌉` by top-k, the rest by weighted sampling from the remainder.
    HalfTopKHalfSampling,
}

/// Sequential weighted draws without replacement, renormalizing after each.
fn weighted_draws<R: Rng + ?Sized>(
    weights: &[f64],
    pool: &mut Vec<usize>,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let positive = pool.iter().filter(|&&j| weights[j] > 0.0).count();
    if positive < draws {
        return Err(GriffinError::invalid(format!(
            "weighted sampling needs {draws} strictly positive entries, only {positive} available"
        )));
    }
    pool.retain(|&j| weights[j] > 0.0);
    let mut chosen = Vec::with_capacity(draws);
    for _ in 0..draws {
        let total: f64 = pool.iter().map(|&j| weights[j]).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = pool.len() - 1;
        for (pos, &j) in pool.iter().enumerate() {
            acc += weights[j];
            if acc > target {
                pick = pos;
                break;
            }
        }
        chosen.push(pool.remove(pick));
    }
    Ok(chosen)
}

pub fn sampled_experts<R: Rng + ?Sized>(
    stat: &NeuronStatistic,
    cfg: SparsityConfig,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<ExpertSet> {
    let d_ff = stat.d_ff();
    let k = cfg.k(d_ff);
    let s = stat.s.as_slice();
    let chosen = match mode {
        SelectionMode::TopK => return select_experts(stat, cfg),
        SelectionMode::WeightedSampling => {
            let mut pool: Vec<usize> = (0..d_ff).collect();
            weighted_draws(s, &mut pool, k, rng)?
        }
        SelectionMode::HalfTopKHalfSampling => {
            let head_k = k.div_ceil(2);
            let mut candidates: Vec<usize> = (0..d_ff).collect();
            let mut head = top_k_ranked(s, &mut candidates, head_k);
            let taken = IndexSet::from_unsorted(head.clone(), d_ff)?;
            let mut pool: Vec<usize> = (0..d_ff).filter(|&j| !taken.contains(j)).collect();
            head.extend(weighted_draws(s, &mut pool, k - head_k, rng)?);
            head
        }
    };
    Ok(ExpertSet {
        experts: IndexSet::from_unsorted(chosen, d_ff)?,
        config: cfg,
    })
}
