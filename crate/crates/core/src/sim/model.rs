use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::ffn::{ff1_forward, ff2_forward, ff_forward, ActivationMatrix, FFBlock, FeedForward};
use crate::gate::{pruned_forward, PrunedFFBlock};
use crate::linalg::{affine_nt, Matrix, Real, Vector};

pub const RMS_EPS: f64 = 1e-6;

/// One residual layer: `h ← h + FF(rms_norm(h) ⊙ norm)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Real = f32> {
    pub norm: Vector<T>,
    pub block: FFBlock<T>,
}

/// Attention-free decoder stack: token embedding, residual feedforward layers
/// with RMS pre-norm, and a linear output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel<T: Real = f32> {
    embed: Matrix<T>,
    unembed: Option<Matrix<T>>,
    layers: Vec<Layer<T>>,
}

impl<T: Real> ToyModel<T> {
    /// `unembed = None` ties the output projection to the embedding.
    pub fn new(embed: Matrix<T>, unembed: Option<Matrix<T>>, layers: Vec<Layer<T>>) -> Result<Self> {
        let (vocab, dim) = embed.shape();
        if vocab == 0 || dim == 0 {
            return Err(GriffinError::invalid("model needs a non-empty embedding"));
        }
        if let Some(u) = &unembed {
            if u.shape() != (vocab, dim) {
                return Err(GriffinError::shape(
                    "unembedding",
                    format!("{vocab}x{dim}"),
                    format!("{}x{}", u.rows(), u.cols()),
                ));
            }
        }
        for l in &layers {
            if l.block.dim() != dim {
                return Err(GriffinError::shape("layer block dim", dim, l.block.dim()));
            }
            if l.norm.len() != dim {
                return Err(GriffinError::shape("layer norm scale", dim, l.norm.len()));
            }
        }
        Ok(Self {
            embed,
            unembed,
            layers,
        })
    }

    pub fn vocab(&self) -> usize {
        self.embed.rows()
    }

    pub fn dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn embed(&self) -> &Matrix<T> {
        &self.embed
    }

    pub fn unembed(&self) -> &Matrix<T> {
        self.unembed.as_ref().unwrap_or(&self.embed)
    }

    pub fn is_tied(&self) -> bool {
        self.unembed.is_none()
    }

    /// Same model with every block replaced.
    pub fn with_blocks(&self, blocks: Vec<FFBlock<T>>) -> Result<Self> {
        if blocks.len() != self.layers.len() {
            return Err(GriffinError::shape("block list", self.layers.len(), blocks.len()));
        }
        let layers = self
            .layers
            .iter()
            .zip(blocks)
            .map(|(l, block)| Layer {
                norm: l.norm.clone(),
                block,
            })
            .collect();
        ToyModel::new(self.embed.clone(), self.unembed.clone(), layers)
    }

    pub fn cast<U: Real>(&self) -> Result<ToyModel<U>> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    norm: l.norm.cast()?,
                    block: l.block.cast()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let unembed = match &self.unembed {
            Some(u) => Some(u.cast()?),
            None => None,
        };
        ToyModel::new(self.embed.cast()?, unembed, layers)
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(i) = tokens.iter().position(|&t| t as usize >= self.vocab()) {
            return Err(GriffinError::invalid(format!(
                "token {} at position {i} is outside the vocabulary of {}",
                tokens[i],
                self.vocab()
            )));
        }
        Ok(())
    }

    pub fn embed_tokens(&self, tokens: &[u32]) -> Result<Matrix<T>> {
        self.check_tokens(tokens)?;
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        self.embed.select_rows(&idx)
    }

    fn logits(&self, h: &Matrix<T>) -> Matrix<T> {
        let zero = vec![T::zero(); self.vocab()];
        affine_nt(h, self.unembed(), &zero)
    }
}

/// Split of a length-`S` sequence into a prompt of `P` tokens and `G`
/// generated positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationPartition {
    prompt_len: usize,
    gen_len: usize,
}

impl SimulationPartition {
    pub fn new(prompt_len: usize, gen_len: usize) -> Result<Self> {
        if prompt_len == 0 || gen_len == 0 {
            return Err(GriffinError::invalid(format!(
                "partition needs P >= 1 and G >= 1, got P={prompt_len} G={gen_len}"
            )));
        }
        Ok(Self { prompt_len, gen_len })
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn gen_len(&self) -> usize {
        self.gen_len
    }

    pub fn total(&self) -> usize {
        self.prompt_len + self.gen_len
    }
}

/// What runs in place of a layer's block during generation.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseBlock<T: Real = f32> {
    /// Neuron-pruned block.
    Pruned(PrunedFFBlock<T>),
    /// Same-shape block with some weights zeroed.
    Masked(FFBlock<T>),
}

impl<T: Real> FeedForward<T> for PhaseBlock<T> {
    fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            PhaseBlock::Pruned(p) => pruned_forward(p, x),
            PhaseBlock::Masked(b) => ff_forward(b, x),
        }
    }
}

pub fn rms_norm<T: Real>(x: &Matrix<T>, scale: &Vector<T>) -> Result<Matrix<T>> {
    if x.cols() != scale.len() {
        return Err(GriffinError::shape("rms_norm scale", x.cols(), scale.len()));
    }
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.rows() * cols);
    for row in x.row_iter() {
        let ms = row.iter().map(|v| v.widen() * v.widen()).sum::<f64>() / cols as f64;
        let inv = T::of(1.0 / (ms + RMS_EPS).sqrt());
        out.extend(row.iter().zip(scale.as_slice()).map(|(&v, &g)| v * inv * g));
    }
    Matrix::new(x.rows(), cols, out)
}

fn add_in_place<T: Real>(h: &mut Matrix<T>, delta: &Matrix<T>) {
    for (a, b) in h.data_mut().iter_mut().zip(delta.as_slice()) {
        *a = *a + *b;
    }
}

/// Residual stream after all full layers.
fn run_stack<T: Real>(model: &ToyModel<T>, mut h: Matrix<T>) -> Result<Matrix<T>> {
    for layer in &model.layers {
        let x = rms_norm(&h, &layer.norm)?;
        let delta = ff_forward(&layer.block, &x)?;
        add_in_place(&mut h, &delta);
    }
    Ok(h)
}

fn run_phase<T: Real>(model: &ToyModel<T>, mut h: Matrix<T>, blocks: &[PhaseBlock<T>]) -> Result<Matrix<T>> {
    for (layer, block) in model.layers.iter().zip(blocks) {
        let x = rms_norm(&h, &layer.norm)?;
        let delta = block.forward(&x)?;
        add_in_place(&mut h, &delta);
    }
    Ok(h)
}

/// Logits for every position (`S × vocab`).
///
/// Without blocks the full model runs everywhere. With blocks and no
/// partition the blocks run everywhere. With both, positions `< P` come from
/// the full model and positions `≥ P` from the given blocks.
pub fn forward_logits<T: Real>(
    model: &ToyModel<T>,
    tokens: &[u32],
    pruned: Option<&[PhaseBlock<T>]>,
    partition: Option<SimulationPartition>,
) -> Result<Matrix<T>> {
    let h0 = model.embed_tokens(tokens)?;
    if let Some(blocks) = pruned {
        if blocks.len() != model.n_layers() {
            return Err(GriffinError::shape("pruned block list", model.n_layers(), blocks.len()));
        }
    }
    match (pruned, partition) {
        (None, None) => Ok(model.logits(&run_stack(model, h0)?)),
        (None, Some(_)) => Err(GriffinError::invalid(
            "a prompt/generation partition requires pruned blocks",
        )),
        (Some(blocks), None) => Ok(model.logits(&run_phase(model, h0, blocks)?)),
        (Some(blocks), Some(part)) => {
            if tokens.len() != part.total() {
                return Err(GriffinError::invalid(format!(
                    "partition covers {} positions but {} tokens were given",
                    part.total(),
                    tokens.len()
                )));
            }
            let full = model.logits(&run_stack(model, h0.clone())?);
            let gen = h0.slice_rows(part.prompt_len(), part.total())?;
            let gen = model.logits(&run_phase(model, gen, blocks)?);
            splice(&full, &gen, part.prompt_len())
        }
    }
}

/// Rows `< at` of `head` followed by all rows of `tail`.
pub(crate) fn splice<T: Real>(head: &Matrix<T>, tail: &Matrix<T>, at: usize) -> Result<Matrix<T>> {
    Matrix::vstack(&[head.slice_rows(0, at)?, tail.clone()])
}

/// Per-layer view of a full-model pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<T: Real = f32> {
    /// Normalized block input.
    pub input: Matrix<T>,
    pub acts: ActivationMatrix<T>,
}

/// Runs the full model and keeps every block's input and activations.
pub fn prompt_trace<T: Real>(model: &ToyModel<T>, tokens: &[u32]) -> Result<Vec<LayerTrace<T>>> {
    if tokens.is_empty() {
        return Err(GriffinError::invalid("prompt must contain at least one token"));
    }
    let mut h = model.embed_tokens(tokens)?;
    let mut out = Vec::with_capacity(model.n_layers());
    for layer in &model.layers {
        let x = rms_norm(&h, &layer.norm)?;
        let acts = ff1_forward(&layer.block, &x)?;
        let delta = ff2_forward(&layer.block, &acts.z)?;
        add_in_place(&mut h, &delta);
        out.push(LayerTrace { input: x, acts });
    }
    Ok(out)
}

pub(crate) fn full_logits<T: Real>(model: &ToyModel<T>, tokens: &[u32]) -> Result<Matrix<T>> {
    Ok(model.logits(&run_stack(model, model.embed_tokens(tokens)?)?))
}

pub(crate) fn phase_logits<T: Real>(
    model: &ToyModel<T>,
    tokens: &[u32],
    blocks: &[PhaseBlock<T>],
) -> Result<Matrix<T>> {
    Ok(model.logits(&run_phase(model, model.embed_tokens(tokens)?, blocks)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffn::ActivationKind;
    use crate::gate::{compute_statistic, prune_block, select_experts, SparsityConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, vocab: usize, d: usize, d_ff: usize, layers: usize) -> ToyModel<f64> {
        let mut m = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-0.5..0.5)).unwrap();
        let embed = m(vocab, d);
        let unembed = m(vocab, d);
        let layers = (0..layers)
            .map(|_| Layer {
                norm: Vector::new(vec![1.0; d]).unwrap(),
                block: FFBlock::without_bias(m(d_ff, d), None, m(d, d_ff), ActivationKind::Relu).unwrap(),
            })
            .collect();
        ToyModel::new(embed, Some(unembed), layers).unwrap()
    }

    fn tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
        (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
    }

    #[test]
    fn rms_norm_gives_unit_rms() {
        let x = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let y = rms_norm(&x, &Vector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        let r = (12.5f64 + RMS_EPS).sqrt();
        assert!((y.get(0, 0) - 3.0 / r).abs() < 1e-12);
        assert!((y.get(0, 1) - 8.0 / r).abs() < 1e-12);
        assert_eq!(y.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic_and_checks_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 20, 8, 16, 2);
        let t = tokens(&mut rng, 12, 20);
        let a = forward_logits(&model, &t, None, None).unwrap();
        assert_eq!(a, forward_logits(&model, &t, None, None).unwrap());
        assert_eq!(a.shape(), (12, 20));
        assert!(forward_logits(&model, &[3, 20], None, None).is_err());
        let part = SimulationPartition::new(6, 6).unwrap();
        assert!(forward_logits(&model, &t, None, Some(part)).is_err());
    }

    #[test]
    fn zero_sparsity_blocks_reproduce_full_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 30, 8, 24, 3);
        let t = tokens(&mut rng, 16, 30);
        let blocks: Vec<_> = model
            .layers()
            .iter()
            .map(|l| {
                let acts = ff1_forward(&l.block, &model.embed_tokens(&t).unwrap()).unwrap();
                let e = select_experts(&compute_statistic(&acts).unwrap(), SparsityConfig::dense()).unwrap();
                PhaseBlock::Pruned(prune_block(&l.block, &e).unwrap())
            })
            .collect();
        let full = forward_logits(&model, &t, None, None).unwrap();
        let part = SimulationPartition::new(10, 6).unwrap();
        let mixed = forward_logits(&model, &t, Some(&blocks), Some(part)).unwrap();
        for (a, b) in full.as_slice().iter().zip(mixed.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn prefix_rows_are_bitwise_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 30, 8, 24, 2);
        let t = tokens(&mut rng, 20, 30);
        let cfg = SparsityConfig::new(0.75).unwrap();
        let blocks: Vec<_> = model
            .layers()
            .iter()
            .map(|l| {
                let e = crate::baselines::magnitude_experts(&l.block, cfg).unwrap();
                PhaseBlock::Pruned(prune_block(&l.block, &e).unwrap())
            })
            .collect();
        let full = forward_logits(&model, &t, None, None).unwrap();
        let part = SimulationPartition::new(7, 13).unwrap();
        let mixed = forward_logits(&model, &t, Some(&blocks), Some(part)).unwrap();
        assert_eq!(full.slice_rows(0, 7).unwrap(), mixed.slice_rows(0, 7).unwrap());
        assert_ne!(full.slice_rows(7, 20).unwrap(), mixed.slice_rows(7, 20).unwrap());
    }

    #[test]
    fn generation_logits_match_masked_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (vocab, d, d_ff) = (40, 16, 64);
        let model = random_model(&mut rng, vocab, d, d_ff, 1);
        let t = tokens(&mut rng, 24, vocab);
        let part = SimulationPartition::new(16, 8).unwrap();
        let layer = &model.layers()[0];
        let x = rms_norm(&model.embed_tokens(&t[..16]).unwrap(), &layer.norm).unwrap();
        let acts = ff1_forward(&layer.block, &x).unwrap();
        let experts = select_experts(&compute_statistic(&acts).unwrap(), SparsityConfig::new(0.5).unwrap()).unwrap();
        assert_eq!(experts.k(), 32);
        let blocks = [PhaseBlock::Pruned(prune_block(&layer.block, &experts).unwrap())];
        let got = forward_logits(&model, &t, Some(&blocks), Some(part)).unwrap();

        // Oracle: token by token, full activations with non-experts zeroed.
        let (w1, w2, u, e) = (layer.block.w1(), layer.block.w2(), model.unembed(), model.embed());
        for (pos, &tok) in t.iter().enumerate().take(24).skip(16) {
            let h: Vec<f64> = e.row(tok as usize).to_vec();
            let rms = (h.iter().map(|v| v * v).sum::<f64>() / d as f64 + RMS_EPS).sqrt();
            let xn: Vec<f64> = h.iter().map(|v| v / rms).collect();
            let mut out = h.clone();
            for j in 0..d_ff {
                if !experts.experts.contains(j) {
                    continue;
                }
                let z = w1.row(j).iter().zip(&xn).map(|(a, b)| a * b).sum::<f64>().max(0.0);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += w2.get(i, j) * z;
                }
            }
            for w in 0..vocab {
                let want: f64 = u.row(w).iter().zip(&out).map(|(a, b)| a * b).sum();
                let g = got.get(pos, w);
                assert!((g - want).abs() <= 1e-5 * (1.0 + want.abs()), "pos {pos} w {w}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn partition_validation() {
        assert!(SimulationPartition::new(0, 3).is_err());
        assert!(SimulationPartition::new(3, 0).is_err());
        assert_eq!(SimulationPartition::new(3, 4).unwrap().total(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 10, 4, 8, 1);
        let blocks = [PhaseBlock::Masked(model.layers()[0].block.clone())];
        let part = SimulationPartition::new(3, 4).unwrap();
        assert!(forward_logits(&model, &[1, 2, 3], Some(&blocks), Some(part)).is_err());
        assert!(forward_logits(&model, &[1, 2, 3], Some(&[]), None).is_err());
    }

    #[test]
    fn trace_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = random_model(&mut rng, 25, 8, 16, 3);
        let t = tokens(&mut rng, 9, 25);
        let traces = prompt_trace(&model, &t).unwrap();
        assert_eq!(traces.len(), 3);
        let x0 = rms_norm(&model.embed_tokens(&t).unwrap(), &model.layers()[0].norm).unwrap();
        assert_eq!(traces[0].input, x0);
        assert!(prompt_trace(&model, &[]).is_err());
    }

    #[test]
    fn model_validates_shapes() {
        let e = Matrix::<f32>::zeros(5, 4);
        assert!(ToyModel::new(e.clone(), Some(Matrix::zeros(5, 3)), vec![]).is_err());
        let block = FFBlock::without_bias(Matrix::zeros(6, 3), None, Matrix::zeros(3, 6), ActivationKind::Relu).unwrap();
        let bad = Layer {
            norm: Vector::new(vec![1.0; 4]).unwrap(),
            block,
        };
        assert!(ToyModel::new(e.clone(), None, vec![bad]).is_err());
        let tied = ToyModel::new(e, None, vec![]).unwrap();
        assert!(tied.is_tied());
        assert_eq!(tied.unembed(), tied.embed());
    }
}
