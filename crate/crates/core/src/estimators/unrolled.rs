//! Unrolled projected gradient with a shared learned affine step:
//! `x_0 = A^+ y`, `x_{k+1} = W (x_k + step A^T (y - A x_k)) + b`.
//!
//! The map is affine in `y` but polynomial in `W`, and it adapts to the operator
//! through the data-consistency step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealVector;
use crate::operators::LinearOperator;

use super::{add_into, Affine};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unrolled {
    pub inner: Affine,
    pub steps: usize,
    pub step: f64,
}

impl Unrolled {
    pub fn new(inner: Affine, steps: usize, step: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param("step", "must be positive"));
        }
        if inner.n_in() != inner.n_out() {
            return Err(Error::shape("unrolled step needs a square map"));
        }
        Ok(Unrolled { inner, steps, step })
    }

    pub fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Iterates from `y`, returning the final state and the pre-step inputs `s_k`.
    fn run(&self, y: &RealVector, op: &LinearOperator, bias: bool) -> Result<(RealVector, Vec<RealVector>)> {
        let mut x = op.pinv_apply(y)?;
        let mut inputs = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let s = &x + op.adjoint(&(y - op.apply(&x)?))? * self.step;
            x = if bias { self.inner.forward(&s) } else { self.inner.jvp(&s) };
            inputs.push(s);
        }
        Ok((x, inputs))
    }

    /// Pulls an output cotangent back one step: `(I - step A^T A) W^T lambda`.
    fn pull(&self, op: &LinearOperator, lambda: &RealVector) -> Result<(RealVector, RealVector)> {
        let ls = self.inner.vjp_input(lambda);
        let back = &ls - op.adjoint(&op.apply(&ls)?)? * self.step;
        Ok((back, ls))
    }

    pub fn forward(&self, y: &RealVector, op: &LinearOperator) -> Result<RealVector> {
        Ok(self.run(y, op, true)?.0)
    }

    pub fn jvp(&self, t: &RealVector, op: &LinearOperator) -> Result<RealVector> {
        Ok(self.run(t, op, false)?.0)
    }

    pub fn vjp_input(&self, op: &LinearOperator, c: &RealVector) -> Result<RealVector> {
        let mut lambda = c.clone();
        let mut gy = RealVector::zeros(op.m());
        for _ in 0..self.steps {
            let (back, ls) = self.pull(op, &lambda)?;
            gy += op.apply(&ls)? * self.step;
            lambda = back;
        }
        Ok(gy + op.pinv_adjoint_apply(&lambda)?)
    }

    fn backprop(&self, op: &LinearOperator, inputs: &[RealVector], c: &RealVector, bias: bool) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.num_params()];
        let mut lambda = c.clone();
        for s in inputs.iter().rev() {
            let local = if bias { self.inner.vjp_params(s, &lambda) } else { self.inner.mixed(&lambda, s) };
            add_into(&mut g, &local, 1.0);
            lambda = self.pull(op, &lambda)?.0;
        }
        Ok(g)
    }

    pub fn vjp_params(&self, y: &RealVector, op: &LinearOperator, c: &RealVector) -> Result<Vec<f64>> {
        let (_, inputs) = self.run(y, op, true)?;
        self.backprop(op, &inputs, c, true)
    }

    /// Gradient of `u^T J v`; the Jacobian is the bias-free iteration.
    pub fn mixed(&self, op: &LinearOperator, u: &RealVector, v: &RealVector) -> Result<Vec<f64>> {
        let (_, inputs) = self.run(v, op, false)?;
        self.backprop(op, &inputs, u, false)
    }
}
