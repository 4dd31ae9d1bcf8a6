//! Dense numeric primitives: row-major matrices, vectors, index sets and the
//! handful of kernels everything else is built from.
//!
//! Storage is generic over [`Real`] (`f32` by default, `f64` for tight oracle
//! work). Norms and statistics are always accumulated in `f64` regardless of
//! the storage type so that neuron rankings stay reproducible at wide hidden
//! sizes.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};

/// Rows whose L2 norm is below this are treated as zero rows.
pub const ZERO_ROW_EPS: f64 = 1e-12;

/// Scalar storage type for matrices and vectors.
pub trait Real: Float + Default + Debug + Display + Send + Sync + Sum + 'static {
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn widen(self) -> f64;

    fn erf(self) -> Self;

    /// `c += a · bᵀ` for row-major `a` (m×k), `b` (n×k) and `c` (m×n).
    #[doc(hidden)]
    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn widen(self) -> f64 {
        self as f64
    }

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
        // SAFETY: the slice lengths cover every element addressed by the
        // strides below (checked in debug builds, guaranteed by callers).
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                1,
                k as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn widen(self) -> f64 {
        self
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                1,
                k as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

fn check_finite<T: Real>(data: &[T], context: &'static str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(GriffinError::NonFinite { context, index }),
        None => Ok(()),
    }
}

/// Dense row-major matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T: Real = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GriffinError::shape(
                "Matrix::new",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        check_finite(&data, "Matrix::new")?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(GriffinError::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Caller guarantees `data.len() == rows * cols` and finiteness.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact panics on zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// Copies the rows at `indices`, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(GriffinError::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self::from_parts(indices.len(), self.cols, data))
    }

    /// Copies the columns at `indices`, in the order given.
    pub fn select_cols(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&j) = indices.iter().find(|&&j| j >= self.cols) {
            return Err(GriffinError::invalid(format!(
                "column index {j} out of range for {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.rows);
        for r in self.row_iter() {
            data.extend(indices.iter().map(|&j| r[j]));
        }
        Ok(Self::from_parts(self.rows, indices.len(), data))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows {
            return Err(GriffinError::invalid(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.rows
            )));
        }
        Ok(Self::from_parts(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[Matrix<T>]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(GriffinError::shape("Matrix::vstack", cols, p.cols));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self::from_parts(rows, cols, data))
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self::from_parts(self.cols, self.rows, data)
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Real>(&self) -> Result<Matrix<U>> {
        Matrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| U::of(v.widen())).collect(),
        )
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Dense vector with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector<T: Real = f32> {
    data: Vec<T>,
}

impl<T: Real> Vector<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        check_finite(&data, "Vector::new")?;
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub(crate) fn from_parts(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize) -> T {
        self.data[i]
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        indices
            .iter()
            .map(|&i| {
                self.data.get(i).copied().ok_or_else(|| {
                    GriffinError::invalid(format!(
                        "index {i} out of range for length {}",
                        self.data.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_parts)
    }

    pub fn cast<U: Real>(&self) -> Result<Vector<U>> {
        Vector::new(self.data.iter().map(|v| U::of(v.widen())).collect())
    }
}

/// Strictly increasing set of indices drawn from `0..universe`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawIndexSet", into = "RawIndexSet")]
pub struct IndexSet {
    indices: Vec<usize>,
    universe: usize,
}

#[derive(Serialize, Deserialize)]
struct RawIndexSet {
    indices: Vec<usize>,
    universe: usize,
}

impl TryFrom<RawIndexSet> for IndexSet {
    type Error = GriffinError;

    fn try_from(raw: RawIndexSet) -> Result<Self> {
        IndexSet::new(raw.indices, raw.universe)
    }
}

impl From<IndexSet> for RawIndexSet {
    fn from(set: IndexSet) -> Self {
        RawIndexSet {
            indices: set.indices,
            universe: set.universe,
        }
    }
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, universe: usize) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(GriffinError::invalid(format!(
                "index set not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= universe {
                return Err(GriffinError::invalid(format!(
                    "index {last} outside universe of size {universe}"
                )));
            }
        }
        Ok(Self { indices, universe })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut indices: Vec<usize>, universe: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, universe)
    }

    pub fn full(universe: usize) -> Self {
        Self {
            indices: (0..universe).collect(),
            universe,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn intersection_len(&self, other: &IndexSet) -> usize {
        let (mut a, mut b, mut n) = (0, 0, 0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        n
    }

    /// Indices of the universe not in this set.
    pub fn complement(&self) -> IndexSet {
        IndexSet {
            indices: (0..self.universe).filter(|&i| !self.contains(i)).collect(),
            universe: self.universe,
        }
    }
}

/// Scales each row to unit L2 norm. Rows with norm below [`ZERO_ROW_EPS`]
/// become zero rows.
pub fn row_normalize<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut data = Vec::with_capacity(m.data.len());
    for r in m.row_iter() {
        let norm = r.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt();
        if norm < ZERO_ROW_EPS {
            data.extend(std::iter::repeat_n(T::zero(), r.len()));
        } else {
            data.extend(r.iter().map(|v| T::of(v.widen() / norm)));
        }
    }
    Matrix::from_parts(m.rows, m.cols, data)
}

/// L2 norm of every column, accumulated in `f64`.
pub fn column_l2_norms<T: Real>(m: &Matrix<T>) -> Vector<f64> {
    let mut acc = vec![0.0f64; m.cols];
    for r in m.row_iter() {
        for (a, v) in acc.iter_mut().zip(r) {
            let v = v.widen();
            *a += v * v;
        }
    }
    Vector::from_parts(acc.into_iter().map(f64::sqrt).collect())
}

/// Orders `(value, index)` pairs by descending value, ascending index.
fn rank_desc<T: Real>(values: &[T]) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + '_ {
    move |&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Indices of the `k` largest entries among `candidates`, ties to the lowest
/// index, returned in ranking order (not sorted).
pub(crate) fn top_k_ranked<T: Real>(values: &[T], candidates: &mut [usize], k: usize) -> Vec<usize> {
    let cmp = rank_desc(values);
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, &cmp);
    }
    let mut head = candidates[..k].to_vec();
    head.sort_unstable_by(&cmp);
    head
}

/// Indices of the `k` largest entries of `v`, ties broken toward the lowest
/// index, returned in ascending index order.
pub fn top_k_indices<T: Real>(v: &Vector<T>, k: usize) -> Result<IndexSet> {
    if k == 0 || k > v.len() {
        return Err(GriffinError::invalid(format!(
            "top-k requires 1 <= k <= {}, got k = {k}",
            v.len()
        )));
    }
    let mut candidates: Vec<usize> = (0..v.len()).collect();
    let mut chosen = top_k_ranked(v.as_slice(), &mut candidates, k);
    chosen.sort_unstable();
    Ok(IndexSet {
        indices: chosen,
        universe: v.len(),
    })
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ta.iter().zip(tb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Below this many multiply-adds a single-row product is not worth splitting
/// across threads.
const PAR_GEMV_MIN_WORK: usize = 1 << 20;

/// `x · wᵀ + b` for `x` (s×d), `w` (n×d) and `b` (n). Shapes are the caller's
/// responsibility.
pub(crate) fn affine_nt<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Matrix<T> {
    debug_assert_eq!(x.cols, w.cols);
    debug_assert_eq!(w.rows, b.len());
    let (s, d, n) = (x.rows, x.cols, w.rows);
    let mut out = Vec::with_capacity(s * n);
    if s == 1 {
        let xr = x.row(0);
        out.resize(n, T::zero());
        let kernel = |(j, o): (usize, &mut T)| *o = dot(xr, w.row(j)) + b[j];
        if n * d >= PAR_GEMV_MIN_WORK && rayon::current_num_threads() > 1 {
            out.par_iter_mut().enumerate().with_min_len(64).for_each(kernel);
        } else {
            out.iter_mut().enumerate().for_each(kernel);
        }
    } else {
        for _ in 0..s {
            out.extend_from_slice(b);
        }
        if d > 0 {
            T::gemm_nt(s, d, n, &x.data, &w.data, &mut out);
        }
    }
    Matrix::from_parts(s, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn construction_rejects_bad_length_and_non_finite() {
        assert!(matches!(
            Matrix::<f32>::new(2, 2, vec![1.0; 3]),
            Err(GriffinError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Matrix::<f32>::new(1, 2, vec![1.0, f32::NAN]),
            Err(GriffinError::NonFinite { index: 1, .. })
        ));
        assert!(Vector::<f64>::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(vec![0, 2, 5], 6).is_ok());
        assert!(IndexSet::new(vec![0, 0], 6).is_err());
        assert!(IndexSet::new(vec![3, 1], 6).is_err());
        assert!(IndexSet::new(vec![6], 6).is_err());
        let s = IndexSet::from_unsorted(vec![4, 1, 4], 5).unwrap();
        assert_eq!(s.as_slice(), &[1, 4]);
        assert_eq!(s.complement().as_slice(), &[0, 2, 3]);
    }

    #[test]
    fn index_set_json_is_validated() {
        let ok: IndexSet = serde_json::from_str(r#"{"indices":[1,3],"universe":4}"#).unwrap();
        assert_eq!(ok.len(), 2);
        assert!(serde_json::from_str::<IndexSet>(r#"{"indices":[3,1],"universe":4}"#).is_err());
    }

    #[test]
    fn row_normalize_three_four_five() {
        let m = Matrix::<f64>::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = row_normalize(&m);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn row_normalize_zero_row_stays_zero() {
        let m = Matrix::<f32>::from_rows(&[[0.0, 0.0], [1e-14, 0.0]]).unwrap();
        let n = row_normalize(&m);
        assert!(n.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_normalize_random_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 4, 8);
        let n = row_normalize(&m);
        for i in 0..4 {
            // reverse summation order as an independent check
            let norm: f64 = (0..8).rev().map(|j| n.get(i, j).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn column_norms_small_cases() {
        let id = Matrix::<f64>::identity(2);
        assert_eq!(column_l2_norms(&id).as_slice(), &[1.0, 1.0]);
        let ones = Matrix::<f64>::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        for v in column_l2_norms(&ones).as_slice() {
            assert!((v - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn column_norms_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_matrix(&mut rng, 16, 32);
        let got = column_l2_norms(&m);
        for j in 0..32 {
            let mut acc = 0.0;
            for i in 0..16 {
                acc += m.get(i, j) * m.get(i, j);
            }
            let want = acc.sqrt();
            assert!((got.get(j) - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn top_k_examples() {
        let v = Vector::new(vec![0.1f64, 0.9, 0.5]).unwrap();
        assert_eq!(top_k_indices(&v, 2).unwrap().as_slice(), &[1, 2]);
        let tie = Vector::new(vec![0.5f64, 0.5, 0.1]).unwrap();
        assert_eq!(top_k_indices(&tie, 1).unwrap().as_slice(), &[0]);
        assert_eq!(top_k_indices(&v, 3).unwrap().as_slice(), &[0, 1, 2]);
        assert!(top_k_indices(&v, 0).is_err());
        assert!(top_k_indices(&v, 4).is_err());
    }

    #[test]
    fn affine_single_row_matches_multi_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 5, 19);
        let w = random_matrix(&mut rng, 7, 19);
        let b: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let all = affine_nt(&x, &w, &b);
        for i in 0..5 {
            let one = affine_nt(&x.slice_rows(i, i + 1).unwrap(), &w, &b);
            for j in 0..7 {
                assert!((one.get(0, j) - all.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Matrix::<f32>::from_fn(33, 21, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let row: Vec<f32> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_rows(&vec![row; 11]).unwrap();
        let out = affine_nt(&x, &w, &[0.0; 33]);
        for i in 1..11 {
            assert_eq!(out.row(i), out.row(0));
        }
    }

    proptest! {
        #[test]
        fn row_normalize_is_idempotent(data in prop::collection::vec(-10.0f64..10.0, 24)) {
            let m = Matrix::new(4, 6, data).unwrap();
            let once = row_normalize(&m);
            let twice = row_normalize(&once);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn top_k_scale_invariant_and_sized(
            data in prop::collection::vec(-5.0f64..5.0, 1..40),
            c in 0.01f64..100.0,
            kf in 0.0f64..1.0,
        ) {
            let n = data.len();
            let k = 1 + ((n - 1) as f64 * kf) as usize;
            let v = Vector::new(data.clone()).unwrap();
            let scaled = Vector::new(data.iter().map(|x| x * c).collect()).unwrap();
            let a = top_k_indices(&v, k).unwrap();
            prop_assert_eq!(a.len(), k);
            prop_assert_eq!(a, top_k_indices(&scaled, k).unwrap());
        }

        #[test]
        fn column_norms_row_permutation_invariant(
            data in prop::collection::vec(-3.0f64..3.0, 30),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let m = Matrix::new(6, 5, data).unwrap();
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p = m.select_rows(&order).unwrap();
            let (a, b) = (column_l2_norms(&m), column_l2_norms(&p));
            for j in 0..5 {
                prop_assert!((a.get(j) - b.get(j)).abs() < 1e-12);
            }
        }
    }
}
