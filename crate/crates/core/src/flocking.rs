//! Measurements of flocking: neurons with high relative activation are shared
//! by the tokens of one sequence but differ between sequences.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::ffn::ActivationMatrix;
use crate::gate::NeuronStatistic;
use crate::linalg::{column_l2_norms, top_k_indices, IndexSet, Matrix, Real, Vector};

/// Leading tokens × features shown in a heatmap by default.
pub const DEFAULT_HEATMAP_WINDOW: (usize, usize) = (512, 512);

/// Intersection over union. Two empty sets count as identical.
pub fn jaccard(a: &IndexSet, b: &IndexSet) -> Result<f64> {
    if a.universe() != b.universe() {
        return Err(GriffinError::invalid(format!(
            "jaccard over different universes ({} vs {})",
            a.universe(),
            b.universe()
        )));
    }
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean pairwise top-k Jaccard similarity of one layer, per k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub layer: usize,
    pub k_grid: Vec<usize>,
    pub mean_similarity: Vec<f64>,
}

fn top_k_sets(samples: &[NeuronStatistic], k: usize) -> Result<Vec<IndexSet>> {
    samples.iter().map(|s| top_k_indices(&s.s, k)).collect()
}

fn check_samples(samples: &[NeuronStatistic]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(GriffinError::invalid(format!(
            "inter-sample similarity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d_ff = samples[0].d_ff();
    if let Some(i) = samples.iter().position(|s| s.d_ff() != d_ff) {
        return Err(GriffinError::invalid(format!(
            "sample {i} has {} neurons, expected {d_ff}",
            samples[i].d_ff()
        )));
    }
    Ok(d_ff)
}

/// Full matrix of pairwise top-k Jaccard similarities (diagonal = 1).
pub fn pairwise_similarity(samples: &[NeuronStatistic], k: usize) -> Result<Vec<Vec<f64>>> {
    check_samples(samples)?;
    let sets = top_k_sets(samples, k)?;
    let n = sets.len();
    let mut out = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard(&sets[i], &sets[j])?;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

pub fn intersample_similarity(
    layer: usize,
    samples: &[NeuronStatistic],
    k_grid: &[usize],
) -> Result<JaccardReport> {
    check_samples(samples)?;
    let mut mean_similarity = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let sets = top_k_sets(samples, k)?;
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                total += jaccard(&sets[i], &sets[j])?;
                pairs += 1;
            }
        }
        mean_similarity.push(total / pairs as f64);
    }
    Ok(JaccardReport {
        layer,
        k_grid: k_grid.to_vec(),
        mean_similarity,
    })
}

/// Top-k Jaccard similarity between the first and second half of one
/// sequence's tokens (the first half gets `⌊S/2⌋` tokens).
pub fn split_half_similarity<T: Real>(acts: &ActivationMatrix<T>, k: usize) -> Result<f64> {
    let s = acts.tokens();
    if s < 2 {
        return Err(GriffinError::invalid(format!(
            "split-half similarity needs at least 2 tokens, got {s}"
        )));
    }
    let half = |a, b| -> Result<IndexSet> {
        top_k_indices(&column_l2_norms(&acts.zbar.slice_rows(a, b)?), k)
    };
    jaccard(&half(0, s / 2)?, &half(s / 2, s)?)
}

/// Entries of `s` sorted descending and min-max scaled to `[0, 1]`. A
/// constant statistic maps to all zeros.
pub fn sorted_statistic_profile(stat: &NeuronStatistic) -> Vector<f64> {
    let mut v = stat.s.as_slice().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let (hi, lo) = match (v.first(), v.last()) {
        (Some(&hi), Some(&lo)) => (hi, lo),
        _ => return Vector::zeros(0),
    };
    let range = hi - lo;
    if range <= 0.0 {
        return Vector::zeros(v.len());
    }
    Vector::new(v.into_iter().map(|x| (x - lo) / range).collect()).expect("finite profile")
}

/// Input perturbations used to check that flocking is not an artifact of
/// natural-language ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Original,
    PermutedTokens,
    UniformRandomTokens,
}

pub fn control_inputs<R: Rng + ?Sized>(
    tokens: &[u32],
    kind: ControlKind,
    vocab: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    match kind {
        ControlKind::Original => Ok(tokens.to_vec()),
        ControlKind::PermutedTokens => {
            let mut out = tokens.to_vec();
            out.shuffle(rng);
            Ok(out)
        }
        ControlKind::UniformRandomTokens => {
            if vocab == 0 || vocab > u32::MAX as usize + 1 {
                return Err(GriffinError::invalid(format!("unusable vocabulary size {vocab}")));
            }
            Ok((0..tokens.len())
                .map(|_| rng.random_range(0..vocab as u64) as u32)
                .collect())
        }
    }
}

/// Absolute relative activations over a leading window of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapExport {
    pub layer: usize,
    pub values: Matrix<f64>,
}

/// Metadata written next to a heatmap CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub layer: usize,
    pub tokens: usize,
    pub features: usize,
    pub source_tokens: usize,
    pub source_features: usize,
}

pub fn heatmap_export<T: Real>(
    acts: &ActivationMatrix<T>,
    window: (usize, usize),
    layer: usize,
) -> Result<HeatmapExport> {
    let (t, f) = window;
    let (rows, cols) = acts.zbar.shape();
    if t > rows || f > cols {
        return Err(GriffinError::invalid(format!(
            "heatmap window {t}x{f} exceeds activations {rows}x{cols}"
        )));
    }
    let values = Matrix::from_fn(t, f, |i, j| acts.zbar.get(i, j).widen().abs())?;
    Ok(HeatmapExport { layer, values })
}

impl HeatmapExport {
    /// One row per token, one column per feature, 6 significant digits.
    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.values)
    }

    pub fn meta(&self, source: (usize, usize)) -> HeatmapMeta {
        HeatmapMeta {
            layer: self.layer,
            tokens: self.values.rows(),
            features: self.values.cols(),
            source_tokens: source.0,
            source_features: source.1,
        }
    }
}

pub fn matrix_to_csv(m: &Matrix<f64>) -> String {
    let mut out = String::new();
    for r in m.row_iter() {
        for (j, v) in r.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_sig(*v, 6));
        }
        out.push('\n');
    }
    out
}

/// `%g`-style formatting with `digits` significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Round first so that e.g. 9.999999 picks the right exponent.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let mut s = String::new();
        let _ = write!(s, "{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
        s
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize], n: usize) -> IndexSet {
        IndexSet::new(v.to_vec(), n).unwrap()
    }

    fn stat(v: &[f64]) -> NeuronStatistic {
        NeuronStatistic::new(Vector::new(v.to_vec()).unwrap(), 1).unwrap()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&[1, 2], 5), &set(&[1, 2], 5)).unwrap(), 1.0);
        assert_eq!(jaccard(&set(&[1, 2], 5), &set(&[3, 4], 5)).unwrap(), 0.0);
        assert!((jaccard(&set(&[1, 2], 5), &set(&[2, 3], 5)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[], 5), &set(&[], 5)).unwrap(), 1.0);
        assert!(jaccard(&set(&[1], 5), &set(&[1], 6)).is_err());
    }

    #[test]
    fn identical_samples_are_fully_similar() {
        let s = stat(&[0.3, 0.9, 0.1, 0.5]);
        let r = intersample_similarity(0, &[s.clone(), s.clone(), s], &[1, 2, 3, 4]).unwrap();
        assert_eq!(r.mean_similarity, vec![1.0; 4]);
    }

    #[test]
    fn disjoint_supports_have_zero_similarity() {
        let a = stat(&[5.0, 4.0, 0.1, 0.1, 0.0, 0.0]);
        let b = stat(&[0.0, 0.1, 5.0, 4.0, 0.2, 0.0]);
        let r = intersample_similarity(3, &[a, b], &[1, 2]).unwrap();
        assert_eq!(r.mean_similarity, vec![0.0, 0.0]);
        assert_eq!(r.layer, 3);
    }

    #[test]
    fn three_samples_hand_counts() {
        // top-3 sets: a = {0,1,2}, b = {1,2,3}, c = {4,5,6}
        let a = stat(&[8.0, 7.0, 6.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = stat(&[0.0, 7.0, 6.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let c = stat(&[0.0, 0.0, 0.0, 0.0, 9.0, 8.0, 7.0, 0.0]);
        // pairs: ab = 2/4, ac = 0, bc = 0
        let r = intersample_similarity(0, &[a.clone(), b.clone(), c.clone()], &[3]).unwrap();
        assert!((r.mean_similarity[0] - 0.5 / 3.0).abs() < 1e-15);
        let p = pairwise_similarity(&[a, b, c], 3).unwrap();
        assert_eq!(p[0][1], 0.5);
        assert_eq!(p[1][0], 0.5);
        assert_eq!(p[2][2], 1.0);
    }

    #[test]
    fn similarity_requires_two_samples() {
        assert!(intersample_similarity(0, &[stat(&[1.0])], &[1]).is_err());
    }

    #[test]
    fn full_k_gives_similarity_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = (0..5)
            .map(|_| stat(&(0..16).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
            .collect();
        let r = intersample_similarity(0, &samples, &[16]).unwrap();
        assert_eq!(r.mean_similarity, vec![1.0]);
    }

    #[test]
    fn similarity_ignores_sample_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples: Vec<_> = (0..6)
            .map(|_| stat(&(0..20).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
            .collect();
        let a = intersample_similarity(0, &samples, &[3, 7, 12]).unwrap();
        samples.reverse();
        samples.swap(1, 4);
        let b = intersample_similarity(0, &samples, &[3, 7, 12]).unwrap();
        for (x, y) in a.mean_similarity.iter().zip(&b.mean_similarity) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn split_half_examples() {
        // Rows 0-1 favour neurons {0,1}; rows 2-3 favour {2,3}.
        let z = Matrix::from_rows(&[
            [3.0f64, 2.0, 0.1, 0.0],
            [2.0, 3.0, 0.0, 0.1],
            [0.1, 0.0, 3.0, 2.0],
            [0.0, 0.1, 2.0, 3.0],
        ])
        .unwrap();
        let acts = ActivationMatrix::from_z(z.clone());
        assert_eq!(split_half_similarity(&acts, 2).unwrap(), 0.0);
        assert_eq!(split_half_similarity(&acts, 4).unwrap(), 1.0);
        let steady = ActivationMatrix::from_z(Matrix::vstack(&vec![z.slice_rows(0, 2).unwrap(); 2]).unwrap());
        assert_eq!(split_half_similarity(&steady, 2).unwrap(), 1.0);
        let one = ActivationMatrix::from_z(z.slice_rows(0, 1).unwrap());
        assert!(split_half_similarity(&one, 2).is_err());
    }

    #[test]
    fn profile_examples() {
        let p = sorted_statistic_profile(&stat(&[2.0, 8.0, 4.0]));
        assert_eq!(p.get(0), 1.0);
        assert!((p.get(1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.get(2), 0.0);
        let hot = sorted_statistic_profile(&stat(&[0.0, 0.0, 3.0, 0.0]));
        assert_eq!(hot.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let flat = sorted_statistic_profile(&stat(&[0.4, 0.4]));
        assert_eq!(flat.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn control_permutation_preserves_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(control_inputs(&[5, 5, 5], ControlKind::PermutedTokens, 10, &mut rng).unwrap(), vec![5, 5, 5]);
        let seq: Vec<u32> = (0..200).map(|_| rng.random_range(0..50)).collect();
        let mut p = control_inputs(&seq, ControlKind::PermutedTokens, 50, &mut rng).unwrap();
        let mut s = seq.clone();
        p.sort_unstable();
        s.sort_unstable();
        assert_eq!(p, s);
        assert_eq!(control_inputs(&seq, ControlKind::Original, 50, &mut rng).unwrap(), seq);
    }

    #[test]
    fn uniform_control_frequencies_within_five_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let toks = control_inputs(&vec![0u32; n], ControlKind::UniformRandomTokens, 256, &mut rng).unwrap();
        let mut counts = [0usize; 256];
        for t in &toks {
            counts[*t as usize] += 1;
        }
        let p = 1.0 / 256.0;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 5.0 * sigma, "count {c}");
        }
        assert!(control_inputs(&[1], ControlKind::UniformRandomTokens, 0, &mut rng).is_err());
    }

    #[test]
    fn heatmap_window_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = Matrix::<f32>::from_fn(20, 30, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        for j in 0..30 {
            z.data_mut()[3 * 30 + j] = 0.0;
        }
        let acts = ActivationMatrix::from_z(z);
        let full = heatmap_export(&acts, (20, 30), 1).unwrap();
        assert!(full.values.row(3).iter().all(|&v| v == 0.0));
        for _ in 0..100 {
            let (i, j) = (rng.random_range(0..20), rng.random_range(0..30));
            assert_eq!(full.values.get(i, j), (acts.zbar.get(i, j) as f64).abs());
        }
        let part = heatmap_export(&acts, (4, 5), 1).unwrap();
        assert_eq!(part.values.shape(), (4, 5));
        assert!(heatmap_export(&acts, (21, 5), 1).is_err());
        let csv = part.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 5);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.0, 6), "0");
        assert_eq!(fmt_sig(1.0, 6), "1");
        assert_eq!(fmt_sig(0.123456789, 6), "0.123457");
        assert_eq!(fmt_sig(123456789.0, 6), "1.23457e+08");
        assert_eq!(fmt_sig(0.00001234567, 6), "1.23457e-05");
        assert_eq!(fmt_sig(9.9999996, 6), "10");
        assert_eq!(fmt_sig(-2.5, 6), "-2.5");
        let x = 0.987654321f64;
        let back: f64 = fmt_sig(x, 6).parse().unwrap();
        assert!((back - x).abs() / x < 5e-6);
    }
}
