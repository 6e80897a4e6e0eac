//! `x = W z + b` on the back-projected input `z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, RealVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    None,
    /// `W_ii = 0`: output `i` never sees input `i`.
    ZeroDiagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub w: RealMatrix,
    pub b: RealVector,
    pub constraint: Constraint,
}

impl Affine {
    pub fn new(w: RealMatrix, b: RealVector, constraint: Constraint) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::shape("bias length differs from output dimension"));
        }
        if constraint == Constraint::ZeroDiagonal && !w.is_square() {
            return Err(Error::shape("zero-diagonal constraint needs a square map"));
        }
        let mut a = Affine { w, b, constraint };
        a.project();
        Ok(a)
    }

    pub fn zeros(n_out: usize, n_in: usize, constraint: Constraint) -> Result<Self> {
        Self::new(RealMatrix::zeros(n_out, n_in), RealVector::zeros(n_out), constraint)
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    fn project(&mut self) {
        if self.constraint == Constraint::ZeroDiagonal {
            for i in 0..self.w.nrows() {
                self.w[(i, i)] = 0.0;
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Row-major `W` followed by `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for i in 0..self.w.nrows() {
            for j in 0..self.w.ncols() {
                p.push(self.w[(i, j)]);
            }
        }
        p.extend(self.b.iter());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (r, c) = self.w.shape();
        for i in 0..r {
            for j in 0..c {
                self.w[(i, j)] = p[i * c + j];
            }
        }
        for i in 0..r {
            self.b[i] = p[r * c + i];
        }
        self.project();
    }

    pub fn forward(&self, z: &RealVector) -> RealVector {
        &self.w * z + &self.b
    }

    pub fn jvp(&self, t: &RealVector) -> RealVector {
        &self.w * t
    }

    pub fn vjp_input(&self, c: &RealVector) -> RealVector {
        self.w.transpose() * c
    }

    fn outer_grad(&self, u: &RealVector, v: &RealVector, with_bias: bool) -> Vec<f64> {
        let (r, cols) = self.w.shape();
        let mut g = vec![0.0; self.num_params()];
        for i in 0..r {
            for j in 0..cols {
                if !(self.constraint == Constraint::ZeroDiagonal && i == j) {
                    g[i * cols + j] = u[i] * v[j];
                }
            }
            if with_bias {
                g[r * cols + i] = u[i];
            }
        }
        g
    }

    pub fn vjp_params(&self, z: &RealVector, c: &RealVector) -> Vec<f64> {
        self.outer_grad(c, z, true)
    }

    /// Gradient of `u^T W v` in parameter layout.
    pub fn mixed(&self, u: &RealVector, v: &RealVector) -> Vec<f64> {
        self.outer_grad(u, v, false)
    }
}
