//! Per-prompt neuron selection for transformer feedforward blocks.
//!
//! The prompt is run through the full model; per block, the neurons whose
//! relative activations are consistently large across the prompt are kept as
//! experts, and generation continues with blocks reduced to those neurons.
//!
//! Modules:
//! - [`linalg`]: matrices, norms, deterministic top-k.
//! - [`ffn`]: plain and gated feedforward blocks.
//! - [`gate`]: statistic, expert selection, block reparameterization.
//! - [`baselines`]: magnitude, Adaptive Wanda and sampling-based selection.
//! - [`flocking`]: Jaccard overlap, sorted profiles, heatmaps, control inputs.
//! - [`sim`]: attention-free toy decoder, planted models, perplexity protocols.
//! - [`bench`]: generation-phase latency measurement.
//! - [`io`]: weight container, token files, atomic output.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod ffn;
pub mod flocking;
pub mod gate;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sim;

pub use error::{GriffinError, Result};
pub use ffn::{ff1_forward, ff2_forward, ff_forward, ActivationKind, ActivationMatrix, FFBlock, FeedForward, Gate};
pub use gate::{
    aggregate_statistics, compute_statistic, griffin_pipeline, prune_block, pruned_forward, select_experts,
    ExpertRecord, ExpertSet, NeuronStatistic, PromptPhase, PrunedFFBlock, SparsityConfig,
};
pub use linalg::{column_l2_norms, row_normalize, top_k_indices, IndexSet, Matrix, Real, Vector};
