//! Synthetic models with a known expert structure.
//!
//! Residual coordinates are split into three groups: `C` cluster input
//! directions `u_c`, `C` cluster output directions `o_c`, and a token-noise
//! subspace. Token `v` belongs to cluster `v mod C` and embeds as
//! `√D·(0.8·u_c + 0.6·ñ_v)` with `ñ_v` a random unit vector in the noise
//! subspace, so after RMS normalization the first layer sees exactly that
//! vector.
//!
//! Every layer draws a fresh random permutation of its neurons and gives each
//! cluster a disjoint block of `experts_per_cluster` of them. A neuron's
//! pre-activation for a token of cluster `c` is a fixed cluster-level value
//! (high on its own cluster, spread over a negative band elsewhere) plus a
//! token-level Gaussian term from the noise subspace. With SiLU the
//! off-cluster neurons stay small and negative, and each neuron writes along
//! the output direction of its own cluster, so every neuron's contribution
//! pushes the next-token distribution toward the current cluster.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::ffn::{ActivationKind, FFBlock};
use crate::linalg::{IndexSet, Matrix, Real, Vector};
use crate::rng::{stream_rng, Stream};
use crate::sim::model::{Layer, ToyModel};

const CLUSTER_WEIGHT: f64 = 0.8;
const NOISE_WEIGHT: f64 = 0.6;
const BIAS: f64 = 1.0;
/// Largest `|silu(x)|` over `x < 0`.
const SILU_NEG_PEAK: f64 = 0.2785;
/// Weight of the input cluster direction in each unembedding row.
const UNEMBED_INPUT_WEIGHT: f64 = 0.2;
const UNEMBED_TOKEN_NOISE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub clusters: usize,
    pub experts_per_cluster: usize,
    /// Minimum ratio of planted-expert activation to background activation.
    pub dominance: f64,
    pub rng_seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self, d_ff: usize) -> Result<()> {
        if self.clusters == 0 || self.experts_per_cluster == 0 {
            return Err(GriffinError::invalid(
                "planted spec needs at least one cluster and one expert per cluster",
            ));
        }
        if !self.dominance.is_finite() || self.dominance <= 1.0 {
            return Err(GriffinError::invalid(format!(
                "dominance must be a finite gain above 1, got {}",
                self.dominance
            )));
        }
        match self.clusters.checked_mul(self.experts_per_cluster) {
            Some(n) if n <= d_ff => Ok(()),
            _ => Err(GriffinError::invalid(format!(
                "{} clusters x {} experts do not fit in {d_ff} neurons",
                self.clusters, self.experts_per_cluster
            ))),
        }
    }
}

/// Sizes and gains of a planted model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedDims {
    pub vocab: usize,
    pub dim: usize,
    pub d_ff: usize,
    pub layers: usize,
    /// Standard deviation of the per-token term in every pre-activation.
    pub token_noise: f64,
    /// Off-cluster pre-activations are drawn uniformly from `−[lo, hi]`.
    pub background_depth: (f64, f64),
    /// Length of each neuron's down-projection column.
    pub write_scale: f64,
    /// Gain of the unembedding along the cluster output directions.
    pub logit_scale: f64,
}

impl PlantedDims {
    pub fn new(vocab: usize, dim: usize, d_ff: usize, layers: usize) -> Self {
        Self {
            vocab,
            dim,
            d_ff,
            layers,
            token_noise: 0.8,
            background_depth: (2.0, 3.0),
            write_scale: 0.1,
            logit_scale: 0.3,
        }
    }
}

/// Ground truth of a planted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub clusters: usize,
    pub vocab: usize,
    /// `supports[layer][cluster]`.
    pub supports: Vec<Vec<IndexSet>>,
}

impl PlantedTruth {
    pub fn cluster_of(&self, token: u32) -> usize {
        token as usize % self.clusters
    }

    pub fn tokens_of(&self, cluster: usize) -> Vec<u32> {
        (cluster..self.vocab)
            .step_by(self.clusters)
            .map(|v| v as u32)
            .collect()
    }

    pub fn support(&self, layer: usize, cluster: usize) -> &IndexSet {
        &self.supports[layer][cluster]
    }

    /// Tokens drawn uniformly from one cluster.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, cluster: usize, len: usize, rng: &mut R) -> Vec<u32> {
        let per = self.tokens_of(cluster).len();
        (0..len)
            .map(|_| (cluster + self.clusters * rng.random_range(0..per)) as u32)
            .collect()
    }
}

/// Pre-activation given to planted experts: high enough that even a
/// three-sigma low draw keeps the SiLU output above `dominance ×` the largest
/// possible background magnitude.
pub fn home_pre_activation(dominance: f64, token_noise: f64) -> f64 {
    SILU_NEG_PEAK * dominance + 3.0 * token_noise + 0.5
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_noise<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate_planted_model<T: Real>(
    spec: &PlantedSpec,
    dims: &PlantedDims,
) -> Result<(ToyModel<T>, PlantedTruth)> {
    spec.validate(dims.d_ff)?;
    let c = spec.clusters;
    let (d, d_ff) = (dims.dim, dims.d_ff);
    if d < 2 * c + 2 {
        return Err(GriffinError::invalid(format!(
            "dim {d} is too small for {c} clusters (need at least {})",
            2 * c + 2
        )));
    }
    if dims.vocab < c {
        return Err(GriffinError::invalid(format!(
            "vocab {} is smaller than the {c} clusters",
            dims.vocab
        )));
    }
    if dims.layers == 0 {
        return Err(GriffinError::invalid("planted model needs at least one layer"));
    }
    let (lo, hi) = dims.background_depth;
    if !(0.0 <= lo && lo < hi && hi.is_finite()) {
        return Err(GriffinError::invalid(format!(
            "background depth must satisfy 0 <= lo < hi, got ({lo}, {hi})"
        )));
    }
    let noise_dims = d - 2 * c;
    let root_d = (d as f64).sqrt();
    let home = home_pre_activation(spec.dominance, dims.token_noise);
    let mut rng = stream_rng(spec.rng_seed, Stream::PlantedWeights, 0);

    let mut embed = vec![0.0f64; dims.vocab * d];
    for v in 0..dims.vocab {
        let row = &mut embed[v * d..(v + 1) * d];
        row[v % c] = root_d * CLUSTER_WEIGHT;
        for (x, n) in row[2 * c..].iter_mut().zip(unit_noise(&mut rng, noise_dims)) {
            *x = root_d * NOISE_WEIGHT * n;
        }
    }

    let mut layers = Vec::with_capacity(dims.layers);
    let mut supports = Vec::with_capacity(dims.layers);
    for _ in 0..dims.layers {
        let mut perm: Vec<usize> = (0..d_ff).collect();
        perm.shuffle(&mut rng);
        let mut owner = vec![None; d_ff];
        let mut layer_supports = Vec::with_capacity(c);
        for cl in 0..c {
            let members = &perm[cl * spec.experts_per_cluster..(cl + 1) * spec.experts_per_cluster];
            for &j in members {
                owner[j] = Some(cl);
            }
            layer_supports.push(IndexSet::from_unsorted(members.to_vec(), d_ff)?);
        }

        let mut w1 = vec![0.0f64; d_ff * d];
        let mut w2 = vec![0.0f64; d * d_ff];
        for j in 0..d_ff {
            let row = &mut w1[j * d..(j + 1) * d];
            for (cl, x) in row[..c].iter_mut().enumerate() {
                let target = if owner[j] == Some(cl) {
                    home
                } else {
                    -rng.random_range(lo..hi)
                };
                *x = (target + BIAS) / (root_d * CLUSTER_WEIGHT);
            }
            for x in row[2 * c..].iter_mut() {
                *x = dims.token_noise * gaussian(&mut rng) / (root_d * NOISE_WEIGHT);
            }
            let out = owner[j].unwrap_or(j % c);
            w2[(c + out) * d_ff + j] = dims.write_scale;
        }
        let block = FFBlock::new(
            Matrix::new(d_ff, d, w1)?.cast()?,
            Vector::new(vec![-BIAS; d_ff])?.cast()?,
            None,
            Matrix::new(d, d_ff, w2)?.cast()?,
            Vector::zeros(d),
            ActivationKind::Silu,
        )?;
        layers.push(Layer {
            norm: Vector::new(vec![T::one(); d])?,
            block,
        });
        supports.push(layer_supports);
    }

    let mut unembed = vec![0.0f64; dims.vocab * d];
    for v in 0..dims.vocab {
        let row = &mut unembed[v * d..(v + 1) * d];
        row[v % c] = dims.logit_scale * UNEMBED_INPUT_WEIGHT;
        row[c + v % c] = dims.logit_scale;
        for (x, n) in row[2 * c..].iter_mut().zip(unit_noise(&mut rng, noise_dims)) {
            *x = UNEMBED_TOKEN_NOISE * n;
        }
    }

    let model = ToyModel::new(
        Matrix::new(dims.vocab, d, embed)?.cast()?,
        Some(Matrix::new(dims.vocab, d, unembed)?.cast()?),
        layers,
    )?;
    let truth = PlantedTruth {
        clusters: c,
        vocab: dims.vocab,
        supports,
    };
    Ok((model, truth))
}
