//! Linear forward operators with adjoints and pseudo-inverses.
//!
//! Measurements of masked operators are kept in embedded form: unmeasured
//! entries are present and zero. Complex measurements are stacked as real
//! parts followed by imaginary parts.

mod group;

pub use group::{GroupAction, GroupKind, Transform};

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_len, RealMatrix, RealVector, PINV_TOL};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Identity,
    DiagonalMask { mask: Vec<bool> },
    MaskedDft { mask: Vec<bool> },
    SubsampledConv { kernel: Vec<f64>, stride: usize },
    Dense { matrix: RealMatrix },
    /// Rows of `base` outside `rows` are zeroed.
    RowMasked { base: Box<LinearOperator>, rows: Vec<bool> },
    /// `base` applied after `transform`.
    Composed { base: Box<LinearOperator>, transform: Transform },
}

#[derive(Clone, Debug)]
pub struct LinearOperator {
    kind: OpKind,
    n: usize,
    m: usize,
    shape: (usize, usize),
    pinv_cache: OnceLock<Arc<RealMatrix>>,
}

impl PartialEq for LinearOperator {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.n == other.n && self.shape == other.shape
    }
}

impl LinearOperator {
    fn build(kind: OpKind, n: usize, m: usize) -> Self {
        LinearOperator { kind, n, m, shape: (1, n), pinv_cache: OnceLock::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::build(OpKind::Identity, n, n)
    }

    /// `y = mask * x`, embedded (`m = n`).
    pub fn diagonal_mask(mask: Vec<bool>) -> Self {
        let n = mask.len();
        Self::build(OpKind::DiagonalMask { mask }, n, n)
    }

    /// Unitary DFT restricted to the masked frequencies (`m = 2n`).
    pub fn masked_dft(mask: Vec<bool>) -> Self {
        let n = mask.len();
        Self::build(OpKind::MaskedDft { mask }, n, 2 * n)
    }

    /// Circular convolution with `kernel` followed by keeping every `stride`-th sample.
    pub fn subsampled_conv(kernel: Vec<f64>, stride: usize, n: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("stride", "must be positive"));
        }
        if kernel.is_empty() || kernel.len() > n {
            return Err(Error::param("kernel", "length must lie in 1..=n"));
        }
        let m = n.div_ceil(stride);
        Ok(Self::build(OpKind::SubsampledConv { kernel, stride }, n, m))
    }

    pub fn dense(matrix: RealMatrix) -> Self {
        let (m, n) = matrix.shape();
        Self::build(OpKind::Dense { matrix }, n, m)
    }

    /// Attach 2D signal metadata. `h * w` must equal `n`.
    pub fn with_shape(mut self, h: usize, w: usize) -> Result<Self> {
        if h * w != self.n {
            return Err(Error::shape(format!("{h}x{w} does not match n = {}", self.n)));
        }
        self.shape = (h, w);
        Ok(self)
    }

    pub fn kind(&self) -> &OpKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn apply(&self, x: &RealVector) -> Result<RealVector> {
        check_len(x, self.n, "operator input")?;
        Ok(match &self.kind {
            OpKind::Identity => x.clone(),
            OpKind::DiagonalMask { mask } => mask_vec(x, mask),
            OpKind::MaskedDft { mask } => {
                let f = linalg::dft(&linalg::to_complex(x));
                let n = self.n;
                let mut out = RealVector::zeros(2 * n);
                for k in 0..n {
                    if mask[k] {
                        out[k] = f[k].re;
                        out[n + k] = f[k].im;
                    }
                }
                out
            }
            OpKind::SubsampledConv { kernel, stride } => {
                let n = self.n;
                RealVector::from_iterator(
                    self.m,
                    (0..self.m).map(|r| {
                        let i = r * stride;
                        kernel.iter().enumerate().map(|(j, k)| k * x[(i + n - j) % n]).sum()
                    }),
                )
            }
            OpKind::Dense { matrix } => matrix * x,
            OpKind::RowMasked { base, rows } => mask_vec(&base.apply(x)?, rows),
            OpKind::Composed { base, transform } => base.apply(&transform.apply(x))?,
        })
    }

    pub fn adjoint(&self, y: &RealVector) -> Result<RealVector> {
        check_len(y, self.m, "adjoint input")?;
        Ok(match &self.kind {
            OpKind::Identity => y.clone(),
            OpKind::DiagonalMask { mask } => mask_vec(y, mask),
            OpKind::MaskedDft { mask } => {
                let n = self.n;
                let c: Vec<Complex64> = (0..n)
                    .map(|k| if mask[k] { Complex64::new(y[k], y[n + k]) } else { Complex64::new(0.0, 0.0) })
                    .collect();
                RealVector::from_iterator(n, linalg::idft(&c).iter().map(|v| v.re))
            }
            OpKind::SubsampledConv { kernel, stride } => {
                let n = self.n;
                let mut out = RealVector::zeros(n);
                for r in 0..self.m {
                    let i = r * stride;
                    for (j, k) in kernel.iter().enumerate() {
                        out[(i + n - j) % n] += k * y[r];
                    }
                }
                out
            }
            OpKind::Dense { matrix } => matrix.transpose() * y,
            OpKind::RowMasked { base, rows } => base.adjoint(&mask_vec(y, rows))?,
            OpKind::Composed { base, transform } => transform.apply_transpose(&base.adjoint(y)?),
        })
    }

    /// Minimum-norm least-squares solution with the default singular-value cutoff.
    pub fn pinv_apply(&self, y: &RealVector) -> Result<RealVector> {
        check_len(y, self.m, "pseudo-inverse input")?;
        Ok(match &self.kind {
            OpKind::Identity => y.clone(),
            OpKind::DiagonalMask { mask } => mask_vec(y, mask),
            OpKind::MaskedDft { mask } => {
                // A^T A = F^H D F with D_k = (b_k + b_{-k}) / 2
                let n = self.n;
                let back = self.adjoint(y)?;
                let f = linalg::dft(&linalg::to_complex(&back));
                let scaled: Vec<Complex64> = (0..n)
                    .map(|k| {
                        let d = 0.5 * (mask[k] as u8 as f64 + mask[(n - k) % n] as u8 as f64);
                        if d > 0.0 { f[k] / d } else { Complex64::new(0.0, 0.0) }
                    })
                    .collect();
                RealVector::from_iterator(n, linalg::idft(&scaled).iter().map(|v| v.re))
            }
            OpKind::Composed { base, transform } => transform.apply_inverse(&base.pinv_apply(y)?),
            _ => self.pinv_matrix()?.as_ref() * y,
        })
    }

    /// `(A^+)^T v`, used to pull gradients back through the back-projection.
    pub fn pinv_adjoint_apply(&self, v: &RealVector) -> Result<RealVector> {
        check_len(v, self.n, "pseudo-inverse adjoint input")?;
        Ok(match &self.kind {
            OpKind::Identity => v.clone(),
            OpKind::DiagonalMask { mask } => mask_vec(v, mask),
            OpKind::MaskedDft { mask } => {
                let n = self.n;
                let f = linalg::dft(&linalg::to_complex(v));
                let scaled: Vec<Complex64> = (0..n)
                    .map(|k| {
                        let d = 0.5 * (mask[k] as u8 as f64 + mask[(n - k) % n] as u8 as f64);
                        if d > 0.0 { f[k] / d } else { Complex64::new(0.0, 0.0) }
                    })
                    .collect();
                let back = RealVector::from_iterator(n, linalg::idft(&scaled).iter().map(|c| c.re));
                self.apply(&back)?
            }
            OpKind::Composed { base, transform } => {
                base.pinv_adjoint_apply(&transform.inverse().apply_transpose(v))?
            }
            _ => self.pinv_matrix()?.transpose() * v,
        })
    }

    /// Pseudo-inverse with an explicit relative cutoff, always through the SVD.
    pub fn pinv_apply_tol(&self, y: &RealVector, tol: f64) -> Result<RealVector> {
        linalg::svd_pinv_apply(&self.matrix()?, y, tol)
    }

    fn pinv_matrix(&self) -> Result<Arc<RealMatrix>> {
        if let Some(p) = self.pinv_cache.get() {
            return Ok(p.clone());
        }
        let p = Arc::new(linalg::pinv(&self.matrix()?, PINV_TOL));
        Ok(self.pinv_cache.get_or_init(|| p).clone())
    }

    /// Dense `m x n` matrix.
    pub fn matrix(&self) -> Result<RealMatrix> {
        if let OpKind::Dense { matrix } = &self.kind {
            return Ok(matrix.clone());
        }
        linalg::matrix_of(self.m, self.n, |e| self.apply(e))
    }

    pub fn gram(&self) -> Result<RealMatrix> {
        linalg::matrix_of(self.n, self.n, |e| self.adjoint(&self.apply(e)?))
    }

    /// Rows that carry measurements; noise is only added there.
    pub fn row_support(&self) -> Vec<bool> {
        match &self.kind {
            OpKind::DiagonalMask { mask } => mask.clone(),
            OpKind::MaskedDft { mask } => mask.iter().chain(mask.iter()).cloned().collect(),
            OpKind::RowMasked { base, rows } => {
                base.row_support().iter().zip(rows).map(|(a, b)| *a && *b).collect()
            }
            OpKind::Composed { base, .. } => base.row_support(),
            _ => vec![true; self.m],
        }
    }

    /// Effective diagonal when the operator is a pixel mask (identity included).
    pub fn diagonal_mask_bits(&self) -> Option<Vec<bool>> {
        match &self.kind {
            OpKind::Identity => Some(vec![true; self.n]),
            OpKind::DiagonalMask { mask } => Some(mask.clone()),
            OpKind::RowMasked { base, rows } => base
                .diagonal_mask_bits()
                .map(|b| b.iter().zip(rows).map(|(a, r)| *a && *r).collect()),
            _ => None,
        }
    }

    /// Keep only the rows flagged in `rows`. Masks stay structured.
    pub fn split_rows(&self, rows: &[bool]) -> Result<LinearOperator> {
        if rows.len() != self.m {
            return Err(Error::shape("row selection length differs from m"));
        }
        let out = match &self.kind {
            OpKind::Identity | OpKind::DiagonalMask { .. } => {
                let b = self.diagonal_mask_bits().expect("mask family");
                LinearOperator::diagonal_mask(b.iter().zip(rows).map(|(a, r)| *a && *r).collect())
            }
            OpKind::MaskedDft { mask } if rows[..self.n] == rows[self.n..] => {
                LinearOperator::masked_dft(mask.iter().zip(rows).map(|(a, r)| *a && *r).collect())
            }
            _ => Self::build(
                OpKind::RowMasked { base: Box::new(self.clone()), rows: rows.to_vec() },
                self.n,
                self.m,
            ),
        };
        let mut out = out;
        out.shape = self.shape;
        Ok(out)
    }

    /// `A o T`, whose adjoint is `T^T o A^T`.
    pub fn compose_with_transform(&self, t: &Transform) -> Result<LinearOperator> {
        if t.n() != self.n {
            return Err(Error::shape("transform dimension differs from operator input"));
        }
        if matches!(t, Transform::Identity { .. }) {
            return Ok(self.clone());
        }
        let mut out = Self::build(
            OpKind::Composed { base: Box::new(self.clone()), transform: t.clone() },
            self.n,
            self.m,
        );
        out.shape = self.shape;
        Ok(out)
    }

    /// Same linear map up to `1e-12` in every matrix entry.
    pub fn same_map(&self, other: &LinearOperator) -> bool {
        if self.n != other.n || self.m != other.m {
            return false;
        }
        if let (Some(a), Some(b)) = (self.diagonal_mask_bits(), other.diagonal_mask_bits()) {
            return a == b;
        }
        match (self.matrix(), other.matrix()) {
            (Ok(a), Ok(b)) => (a - b).amax() <= 1e-12,
            _ => false,
        }
    }
}

fn mask_vec(x: &RealVector, mask: &[bool]) -> RealVector {
    RealVector::from_iterator(x.len(), x.iter().zip(mask).map(|(v, &b)| if b { *v } else { 0.0 }))
}

/// `||A^T A T - T A^T A||_F <= tol ||A^T A||_F` for every group element.
pub fn is_equivariant(op: &LinearOperator, group: &GroupAction, tol: f64) -> Result<bool> {
    let g = op.gram()?;
    let scale = g.norm();
    for t in &group.elements {
        let tm = t.matrix();
        if (&g * &tm - &tm * &g).norm() > tol * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest eigenvalue of `sum_g w_g A_g^T A_g`; positive means the stack has full column rank.
pub fn stacked_rank_condition(ops: &[&LinearOperator], weights: &[f64]) -> Result<f64> {
    if ops.is_empty() || ops.len() != weights.len() {
        return Err(Error::shape("need one weight per operator"));
    }
    let n = ops[0].n();
    let mut acc = RealMatrix::zeros(n, n);
    for (op, w) in ops.iter().zip(weights) {
        if op.n() != n {
            return Err(Error::shape("operators act on different dimensions"));
        }
        acc += op.gram()? * *w;
    }
    Ok(linalg::min_eigenvalue(&acc))
}

/// Source of forward operators for multi-operator problems.
#[derive(Clone, Debug)]
pub enum OperatorDistribution {
    Finite { ops: Vec<Arc<LinearOperator>>, weights: Vec<f64> },
    /// Pixel masks with independent keep probabilities.
    BernoulliMask { p: Vec<f64> },
}

impl OperatorDistribution {
    pub fn finite(ops: Vec<LinearOperator>, weights: Vec<f64>) -> Result<Self> {
        if ops.is_empty() || ops.len() != weights.len() {
            return Err(Error::shape("need one weight per operator"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::param("weights", "must be non-negative with positive sum"));
        }
        let s: f64 = weights.iter().sum();
        Ok(OperatorDistribution::Finite {
            ops: ops.into_iter().map(Arc::new).collect(),
            weights: weights.iter().map(|w| w / s).collect(),
        })
    }

    pub fn uniform(ops: Vec<LinearOperator>) -> Result<Self> {
        let k = ops.len();
        Self::finite(ops, vec![1.0; k])
    }

    pub fn bernoulli(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("p", "keep probabilities must lie in [0, 1]"));
        }
        Ok(OperatorDistribution::BernoulliMask { p })
    }

    pub fn n(&self) -> usize {
        match self {
            OperatorDistribution::Finite { ops, .. } => ops[0].n(),
            OperatorDistribution::BernoulliMask { p } => p.len(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Arc<LinearOperator> {
        match self {
            OperatorDistribution::Finite { ops, weights } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (op, w) in ops.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return op.clone();
                    }
                }
                ops.last().expect("non-empty").clone()
            }
            OperatorDistribution::BernoulliMask { p } => {
                Arc::new(LinearOperator::diagonal_mask(p.iter().map(|&q| rng.bernoulli(q)).collect()))
            }
        }
    }
}

/// Serializable operator description used by configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity { n: usize },
    DiagonalMask { mask: Vec<bool> },
    MaskedDft { mask: Vec<bool> },
    SubsampledConv { kernel: Vec<f64>, stride: usize, n: usize },
    Dense { rows: Vec<Vec<f64>> },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<LinearOperator> {
        Ok(match self {
            OperatorSpec::Identity { n } => LinearOperator::identity(*n),
            OperatorSpec::DiagonalMask { mask } => LinearOperator::diagonal_mask(mask.clone()),
            OperatorSpec::MaskedDft { mask } => LinearOperator::masked_dft(mask.clone()),
            OperatorSpec::SubsampledConv { kernel, stride, n } => {
                LinearOperator::subsampled_conv(kernel.clone(), *stride, *n)?
            }
            OperatorSpec::Dense { rows } => {
                let m = rows.len();
                let n = rows.first().map(|r| r.len()).unwrap_or(0);
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::shape("dense rows have different lengths"));
                }
                LinearOperator::dense(RealMatrix::from_row_iterator(m, n, rows.iter().flatten().cloned()))
            }
        })
    }
}
