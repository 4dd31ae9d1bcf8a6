//! Transformer feedforward blocks: the plain form `σ(W1 x + b1)` and the
//! gated (GLU) form `σ(Wg x + bg) ⊙ (W1 x + b1)`, both followed by the linear
//! down projection `W2 z + b2`.
//!
//! Inputs are token-major: a sequence is an `S × D` matrix and every token
//! row is processed independently.

use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::linalg::{affine_nt, row_normalize, Matrix, Real, Vector};

/// Elementwise nonlinearity. Combined with a gate, `Silu` gives SwiGLU,
/// `Gelu` gives GEGLU and `Relu` gives ReGLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Silu,
    /// Exact form `x · Φ(x)` using `erf`.
    Gelu,
    /// Tanh approximation of GELU, for checkpoints trained with it.
    GeluTanh,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            ActivationKind::Relu => x.max(T::zero()),
            ActivationKind::Silu => x / (T::one() + (-x).exp()),
            ActivationKind::Gelu => {
                let half = T::of(0.5);
                half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
            }
            ActivationKind::GeluTanh => {
                let c = T::of((2.0 / std::f64::consts::PI).sqrt());
                let inner = c * (x + T::of(0.044715) * x * x * x);
                T::of(0.5) * x * (T::one() + inner.tanh())
            }
            ActivationKind::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Silu => "silu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::GeluTanh => "gelu_tanh",
            ActivationKind::Identity => "identity",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = GriffinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "silu" | "swish" => Ok(ActivationKind::Silu),
            "gelu" => Ok(ActivationKind::Gelu),
            "gelu_tanh" => Ok(ActivationKind::GeluTanh),
            "identity" => Ok(ActivationKind::Identity),
            other => Err(GriffinError::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Gate projection of a GLU block.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate<T: Real = f32> {
    pub wg: Matrix<T>,
    pub bg: Vector<T>,
}

/// Feedforward block parameters. Biases are always present (zero when the
/// source model has none).
#[derive(Clone, Debug, PartialEq)]
pub struct FFBlock<T: Real = f32> {
    w1: Matrix<T>,
    b1: Vector<T>,
    gate: Option<Gate<T>>,
    w2: Matrix<T>,
    b2: Vector<T>,
    act: ActivationKind,
}

impl<T: Real> FFBlock<T> {
    /// `w1`: D_FF × D, `w2`: D × D_FF, gate (if any) shaped like `w1`/`b1`.
    pub fn new(
        w1: Matrix<T>,
        b1: Vector<T>,
        gate: Option<Gate<T>>,
        w2: Matrix<T>,
        b2: Vector<T>,
        act: ActivationKind,
    ) -> Result<Self> {
        let (d_ff, d) = w1.shape();
        if b1.len() != d_ff {
            return Err(GriffinError::shape("FFBlock b1", d_ff, b1.len()));
        }
        if w2.shape() != (d, d_ff) {
            return Err(GriffinError::shape(
                "FFBlock w2",
                format!("{d}x{d_ff}"),
                format!("{}x{}", w2.rows(), w2.cols()),
            ));
        }
        if b2.len() != d {
            return Err(GriffinError::shape("FFBlock b2", d, b2.len()));
        }
        if let Some(g) = &gate {
            if g.wg.shape() != (d_ff, d) {
                return Err(GriffinError::shape(
                    "FFBlock wg",
                    format!("{d_ff}x{d}"),
                    format!("{}x{}", g.wg.rows(), g.wg.cols()),
                ));
            }
            if g.bg.len() != d_ff {
                return Err(GriffinError::shape("FFBlock bg", d_ff, g.bg.len()));
            }
        }
        Ok(Self {
            w1,
            b1,
            gate,
            w2,
            b2,
            act,
        })
    }

    /// Block with all biases zero.
    pub fn without_bias(
        w1: Matrix<T>,
        wg: Option<Matrix<T>>,
        w2: Matrix<T>,
        act: ActivationKind,
    ) -> Result<Self> {
        let d_ff = w1.rows();
        let d = w1.cols();
        let gate = wg.map(|wg| Gate {
            wg,
            bg: Vector::zeros(d_ff),
        });
        Self::new(w1, Vector::zeros(d_ff), gate, w2, Vector::zeros(d), act)
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_ff(&self) -> usize {
        self.w1.rows()
    }

    pub fn is_glu(&self) -> bool {
        self.gate.is_some()
    }

    pub fn activation(&self) -> ActivationKind {
        self.act
    }

    pub fn w1(&self) -> &Matrix<T> {
        &self.w1
    }

    pub fn b1(&self) -> &Vector<T> {
        &self.b1
    }

    pub fn gate(&self) -> Option<&Gate<T>> {
        self.gate.as_ref()
    }

    pub fn w2(&self) -> &Matrix<T> {
        &self.w2
    }

    pub fn b2(&self) -> &Vector<T> {
        &self.b2
    }

    /// Converts storage precision.
    pub fn cast<U: Real>(&self) -> Result<FFBlock<U>> {
        let gate = match &self.gate {
            Some(g) => Some(Gate {
                wg: g.wg.cast()?,
                bg: g.bg.cast()?,
            }),
            None => None,
        };
        FFBlock::new(
            self.w1.cast()?,
            self.b1.cast()?,
            gate,
            self.w2.cast()?,
            self.b2.cast()?,
            self.act,
        )
    }

    fn check_input(&self, x: &Matrix<T>, context: &'static str) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(GriffinError::shape(context, self.dim(), x.cols()));
        }
        Ok(())
    }

    /// FF activations `z` (S × D_FF) without the normalized copy.
    pub(crate) fn activations(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x, "ff1_forward input")?;
        let mut z = affine_nt(x, &self.w1, self.b1.as_slice());
        let act = self.act;
        match &self.gate {
            None => z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v)),
            Some(g) => {
                let gated = affine_nt(x, &g.wg, g.bg.as_slice());
                for (v, gv) in z.data_mut().iter_mut().zip(gated.as_slice()) {
                    *v = act.apply(*gv) * *v;
                }
            }
        }
        if let Some(index) = z.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(GriffinError::NonFinite {
                context: "ff1_forward output",
                index,
            });
        }
        Ok(z)
    }

    fn down(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        if z.cols() != self.d_ff() {
            return Err(GriffinError::shape("ff2_forward input", self.d_ff(), z.cols()));
        }
        Ok(affine_nt(z, &self.w2, self.b2.as_slice()))
    }
}

/// FF activations of one sequence together with their row-normalized form
/// (the relative activations).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix<T: Real = f32> {
    pub z: Matrix<T>,
    pub zbar: Matrix<T>,
}

impl<T: Real> ActivationMatrix<T> {
    pub fn from_z(z: Matrix<T>) -> Self {
        let zbar = row_normalize(&z);
        Self { z, zbar }
    }

    pub fn tokens(&self) -> usize {
        self.z.rows()
    }

    pub fn d_ff(&self) -> usize {
        self.z.cols()
    }
}

pub fn ff1_forward<T: Real>(block: &FFBlock<T>, x: &Matrix<T>) -> Result<ActivationMatrix<T>> {
    Ok(ActivationMatrix::from_z(block.activations(x)?))
}

pub fn ff2_forward<T: Real>(block: &FFBlock<T>, z: &Matrix<T>) -> Result<Matrix<T>> {
    block.down(z)
}

pub fn ff_forward<T: Real>(block: &FFBlock<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    block.down(&block.activations(x)?)
}

/// Anything that maps an `S × D` token matrix to an `S × D` output the way a
/// feedforward block does.
pub trait FeedForward<T: Real> {
    fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>>;
}

impl<T: Real> FeedForward<T> for FFBlock<T> {
    fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        ff_forward(self, x)
    }
}
