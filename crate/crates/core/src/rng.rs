//! Seed fan-out. Every consumer of randomness gets its own ChaCha stream
//! derived from one root seed, so results do not depend on call order and
//! are identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers, one per consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    PlantedWeights = 1,
    PlantedSequences = 2,
    Sampling = 3,
    Control = 4,
    BenchWeights = 5,
    BenchInputs = 6,
    RandomModel = 7,
}

/// Generator for `(seed, stream, index)`. `index` separates repeated draws
/// within one stream (per sequence, per layer, per trial).
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
