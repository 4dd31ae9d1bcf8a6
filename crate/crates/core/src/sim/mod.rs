//! Attention-free decoder stack for running the prompt/generation protocols
//! end to end, plus a generator for models with planted expert structure.

pub mod eval;
pub mod model;
pub mod planted;

pub use eval::{
    batched_perplexity, classification_as_generation, corpus_perplexity, generation_perplexity,
    prompt_statistics, select_generation_blocks, Batching, CrossEntropy, EvalConfig, Method,
    PerplexityPair,
};
pub use model::{
    forward_logits, prompt_trace, rms_norm, Layer, LayerTrace, PhaseBlock, SimulationPartition,
    ToyModel, RMS_EPS,
};
pub use planted::{generate_planted_model, PlantedDims, PlantedSpec, PlantedTruth};
