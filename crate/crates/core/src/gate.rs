//! Per-prompt expert selection.
//!
//! During the prompt phase each feedforward block sees the whole prompt. The
//! relative activations `Z̄` (rows of `Z` scaled to unit norm) are reduced
//! along the token axis to a per-neuron score `s_j = ‖Z̄[·, j]‖₂`; the top-k
//! neurons by `s` become the experts, and the block is reparameterized down
//! to just those rows of `W1`/`Wg`/`b1`/`bg` and columns of `W2`. Every
//! subsequent generation step runs the reduced block.

use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::ffn::{ff1_forward, ff2_forward, ActivationMatrix, FFBlock, FeedForward, Gate};
use crate::linalg::{column_l2_norms, top_k_indices, IndexSet, Matrix, Real, Vector};

/// Fraction of feedforward neurons removed during generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    ff_sparsity: f64,
}

impl SparsityConfig {
    pub fn new(ff_sparsity: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ff_sparsity) {
            return Err(GriffinError::invalid(format!(
                "ff sparsity must lie in [0, 1), got {ff_sparsity}"
            )));
        }
        Ok(Self { ff_sparsity })
    }

    pub fn dense() -> Self {
        Self { ff_sparsity: 0.0 }
    }

    pub fn ff_sparsity(&self) -> f64 {
        self.ff_sparsity
    }

    /// Number of neurons kept: `max(1, round((1 − sparsity) · d_ff))`, with
    /// halves rounded up.
    pub fn k(&self, d_ff: usize) -> usize {
        let kept = ((1.0 - self.ff_sparsity) * d_ff as f64 + 0.5).floor() as usize;
        kept.clamp(1, d_ff.max(1))
    }
}

/// Per-neuron importance score accumulated over a prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronStatistic {
    pub s: Vector<f64>,
    pub token_count: usize,
}

impl NeuronStatistic {
    pub fn new(s: Vector<f64>, token_count: usize) -> Result<Self> {
        if let Some(j) = s.as_slice().iter().position(|&v| v < 0.0) {
            return Err(GriffinError::invalid(format!(
                "neuron statistic entry {j} is negative"
            )));
        }
        Ok(Self { s, token_count })
    }

    pub fn d_ff(&self) -> usize {
        self.s.len()
    }
}

/// The neurons kept for generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSet {
    pub experts: IndexSet,
    pub config: SparsityConfig,
}

impl ExpertSet {
    pub fn new(experts: IndexSet, config: SparsityConfig) -> Result<Self> {
        let k = config.k(experts.universe());
        if experts.len() != k {
            return Err(GriffinError::invalid(format!(
                "expert set has {} members but sparsity {} implies k = {k}",
                experts.len(),
                config.ff_sparsity()
            )));
        }
        Ok(Self { experts, config })
    }

    /// Every neuron selected, as at zero sparsity.
    pub fn all(d_ff: usize) -> Self {
        Self {
            experts: IndexSet::full(d_ff),
            config: SparsityConfig::dense(),
        }
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn record(&self, layer: usize) -> ExpertRecord {
        ExpertRecord {
            layer,
            k: self.k(),
            indices: self.experts.as_slice().to_vec(),
        }
    }
}

/// JSON export shape for expert sets: `{layer, k, indices}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub layer: usize,
    pub k: usize,
    pub indices: Vec<usize>,
}

/// A feedforward block reduced to its expert neurons. The inner block has
/// `d_ff = k` and its rows/columns appear in ascending expert order.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedFFBlock<T: Real = f32> {
    block: FFBlock<T>,
    provenance: ExpertSet,
}

impl<T: Real> PrunedFFBlock<T> {
    pub fn block(&self) -> &FFBlock<T> {
        &self.block
    }

    pub fn experts(&self) -> &ExpertSet {
        &self.provenance
    }

    pub fn k(&self) -> usize {
        self.block.d_ff()
    }

    pub fn into_block(self) -> FFBlock<T> {
        self.block
    }
}

impl<T: Real> FeedForward<T> for PrunedFFBlock<T> {
    fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        pruned_forward(self, x)
    }
}

/// `s_j = ‖Z̄[·, j]‖₂`, accumulated in `f64`.
pub fn compute_statistic<T: Real>(acts: &ActivationMatrix<T>) -> Result<NeuronStatistic> {
    if acts.zbar.rows() == 0 || acts.zbar.cols() == 0 {
        return Err(GriffinError::invalid(
            "cannot compute a neuron statistic from an empty activation matrix",
        ));
    }
    Ok(NeuronStatistic {
        s: column_l2_norms(&acts.zbar),
        token_count: acts.zbar.rows(),
    })
}

pub fn select_experts(stat: &NeuronStatistic, cfg: SparsityConfig) -> Result<ExpertSet> {
    let k = cfg.k(stat.d_ff());
    Ok(ExpertSet {
        experts: top_k_indices(&stat.s, k)?,
        config: cfg,
    })
}

/// Copies the expert rows of `W1`, `b1`, `Wg`, `bg` and the expert columns of
/// `W2`; `b2` is kept whole.
pub fn prune_block<T: Real>(block: &FFBlock<T>, experts: &ExpertSet) -> Result<PrunedFFBlock<T>> {
    if experts.experts.universe() != block.d_ff() {
        return Err(GriffinError::invalid(format!(
            "expert set is over {} neurons but the block has {}",
            experts.experts.universe(),
            block.d_ff()
        )));
    }
    let idx = experts.experts.as_slice();
    let gate = match block.gate() {
        Some(g) => Some(Gate {
            wg: g.wg.select_rows(idx)?,
            bg: g.bg.select(idx)?,
        }),
        None => None,
    };
    let reduced = FFBlock::new(
        block.w1().select_rows(idx)?,
        block.b1().select(idx)?,
        gate,
        block.w2().select_cols(idx)?,
        block.b2().clone(),
        block.activation(),
    )?;
    Ok(PrunedFFBlock {
        block: reduced,
        provenance: experts.clone(),
    })
}

pub fn pruned_forward<T: Real>(p: &PrunedFFBlock<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    crate::ffn::ff_forward(&p.block, x)
}

/// `s̄ = Σᵢ sᵢ / √Sᵢ`. The token count of the result is the total over inputs.
pub fn aggregate_statistics(stats: &[NeuronStatistic]) -> Result<NeuronStatistic> {
    let first = stats
        .first()
        .ok_or_else(|| GriffinError::invalid("cannot aggregate an empty list of statistics"))?;
    let d_ff = first.d_ff();
    let mut acc = vec![0.0f64; d_ff];
    let mut tokens = 0usize;
    for (i, st) in stats.iter().enumerate() {
        if st.d_ff() != d_ff {
            return Err(GriffinError::invalid(format!(
                "statistic {i} has length {} but the first has {d_ff}",
                st.d_ff()
            )));
        }
        if st.token_count == 0 {
            return Err(GriffinError::invalid(format!("statistic {i} covers zero tokens")));
        }
        let w = 1.0 / (st.token_count as f64).sqrt();
        for (a, v) in acc.iter_mut().zip(st.s.as_slice()) {
            *a += v * w;
        }
        tokens += st.token_count;
    }
    Ok(NeuronStatistic {
        s: Vector::new(acc)?,
        token_count: tokens,
    })
}

/// Result of running one block over a prompt.
#[derive(Clone, Debug)]
pub struct PromptPhase<T: Real = f32> {
    /// Output of the full block on the prompt.
    pub prompt_output: Matrix<T>,
    pub statistic: NeuronStatistic,
    /// Reduced block for every subsequent generation step.
    pub pruned: PrunedFFBlock<T>,
}

/// Prompt phase for one block: full forward pass, with expert selection from
/// the same activations.
pub fn griffin_pipeline<T: Real>(
    block: &FFBlock<T>,
    prompt: &Matrix<T>,
    cfg: SparsityConfig,
) -> Result<PromptPhase<T>> {
    if prompt.rows() == 0 {
        return Err(GriffinError::invalid("prompt must contain at least one token"));
    }
    let acts = ff1_forward(block, prompt)?;
    let prompt_output = ff2_forward(block, &acts.z)?;
    let statistic = compute_statistic(&acts)?;
    let experts = select_experts(&statistic, cfg)?;
    let pruned = prune_block(block, &experts)?;
    Ok(PromptPhase {
        prompt_output,
        statistic,
        pruned,
    })
}
