//! Parametric reconstructors `x = f(y, A)` with the derivatives the losses need.
//!
//! Every estimator sees the back-projection `z = A^+ y`. Besides the forward
//! map it exposes parameter gradients (`vjp_params`), input Jacobian products
//! (`jvp_input`, `vjp_input`) and the parameter gradient of `u^T J v`
//! (`mixed`), which divergence penalties need.

mod affine;
mod mlp;
mod unrolled;

pub use affine::{Affine, Constraint};
pub use mlp::Mlp;
pub use unrolled::Unrolled;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RealMatrix, RealVector};
use crate::operators::{GroupAction, LinearOperator, OpKind};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    Affine(Affine),
    /// Network applied to the back-projection.
    Mlp(Mlp),
    /// Group average `(1/|G|) sum_g T_g f(y, A T_g)`, equivariant by construction.
    Reynolds { base: Box<Estimator>, group: GroupAction },
    /// One affine map per operator in a finite set.
    PerOperator { keys: Vec<LinearOperator>, members: Vec<Affine> },
    Unrolled(Unrolled),
}

impl Estimator {
    pub fn affine_zeros(n: usize, constraint: Constraint) -> Result<Self> {
        Ok(Estimator::Affine(Affine::zeros(n, n, constraint)?))
    }

    pub fn affine(w: RealMatrix, b: RealVector, constraint: Constraint) -> Result<Self> {
        Ok(Estimator::Affine(Affine::new(w, b, constraint)?))
    }

    pub fn mlp(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        Ok(Estimator::Mlp(Mlp::new(widths, rng)?))
    }

    /// Unrolled iteration starting from the identity step, so it begins at `A^+ y`.
    pub fn unrolled(n: usize, steps: usize, step: f64) -> Result<Self> {
        let inner = Affine::new(RealMatrix::identity(n, n), RealVector::zeros(n), Constraint::None)?;
        Ok(Estimator::Unrolled(Unrolled::new(inner, steps, step)?))
    }

    pub fn reynolds(base: Estimator, group: GroupAction) -> Result<Self> {
        if group.closure_table().is_none() {
            return Err(Error::param("group", "averaging needs a closed group"));
        }
        Ok(Estimator::Reynolds { base: Box::new(base), group })
    }

    pub fn per_operator(keys: Vec<LinearOperator>, n: usize) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::param("keys", "need at least one operator"));
        }
        let members = keys.iter().map(|_| Affine::zeros(n, n, Constraint::None)).collect::<Result<_>>()?;
        Ok(Estimator::PerOperator { keys, members })
    }

    pub fn is_affine(&self) -> bool {
        match self {
            Estimator::Affine(_) | Estimator::PerOperator { .. } | Estimator::Unrolled(_) => true,
            Estimator::Mlp(_) => false,
            Estimator::Reynolds { base, .. } => base.is_affine(),
        }
    }

    /// Whether the output is linear in the parameters, so quadratic losses stay quadratic.
    pub fn linear_in_params(&self) -> bool {
        match self {
            Estimator::Affine(_) | Estimator::PerOperator { .. } => true,
            Estimator::Mlp(_) | Estimator::Unrolled(_) => false,
            Estimator::Reynolds { base, .. } => base.linear_in_params(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Estimator::Affine(a) => a.num_params(),
            Estimator::Mlp(m) => m.num_params(),
            Estimator::Reynolds { base, .. } => base.num_params(),
            Estimator::Unrolled(u) => u.num_params(),
            Estimator::PerOperator { members, .. } => members.iter().map(|a| a.num_params()).sum(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Estimator::Affine(a) => a.params(),
            Estimator::Mlp(m) => m.params(),
            Estimator::Reynolds { base, .. } => base.params(),
            Estimator::Unrolled(u) => u.inner.params(),
            Estimator::PerOperator { members, .. } => members.iter().flat_map(|a| a.params()).collect(),
        }
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::shape(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        match self {
            Estimator::Affine(a) => a.set_params(p),
            Estimator::Mlp(m) => m.set_params(p),
            Estimator::Reynolds { base, .. } => base.set_params(p)?,
            Estimator::Unrolled(u) => u.inner.set_params(p),
            Estimator::PerOperator { members, .. } => {
                let mut k = 0;
                for a in members.iter_mut() {
                    let c = a.num_params();
                    a.set_params(&p[k..k + c]);
                    k += c;
                }
            }
        }
        Ok(())
    }

    fn lookup(&self, op: &LinearOperator) -> Result<(usize, usize)> {
        if let Estimator::PerOperator { keys, members } = self {
            let mut offset = 0;
            for (i, (k, a)) in keys.iter().zip(members).enumerate() {
                if k.same_map(op) {
                    return Ok((offset, i));
                }
                offset += a.num_params();
            }
            return Err(Error::Capability("operator not in the estimator's table".into()));
        }
        unreachable!("lookup on a shared-parameter estimator")
    }

    fn embed(&self, offset: usize, local: Vec<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params()];
        g[offset..offset + local.len()].copy_from_slice(&local);
        g
    }

    fn for_group<F>(&self, op: &LinearOperator, group: &GroupAction, mut f: F) -> Result<()>
    where
        F: FnMut(&crate::operators::Transform, &LinearOperator) -> Result<()>,
    {
        for t in &group.elements {
            f(t, &op.compose_with_transform(t)?)?;
        }
        Ok(())
    }

    pub fn forward(&self, y: &RealVector, op: &LinearOperator) -> Result<RealVector> {
        match self {
            Estimator::Affine(a) => Ok(a.forward(&op.pinv_apply(y)?)),
            Estimator::Mlp(m) => Ok(m.forward(&op.pinv_apply(y)?)),
            Estimator::Unrolled(u) => u.forward(y, op),
            Estimator::PerOperator { members, .. } => {
                let (_, k) = self.lookup(op)?;
                Ok(members[k].forward(&op.pinv_apply(y)?))
            }
            Estimator::Reynolds { base, group } => {
                let mut acc = RealVector::zeros(op.n());
                self.for_group(op, group, |t, at| {
                    acc += t.apply(&base.forward(y, at)?);
                    Ok(())
                })?;
                Ok(acc / group.len() as f64)
            }
        }
    }

    /// `J t` with `J = df/dy`.
    pub fn jvp_input(&self, y: &RealVector, op: &LinearOperator, t: &RealVector) -> Result<RealVector> {
        match self {
            Estimator::Affine(a) => Ok(a.jvp(&op.pinv_apply(t)?)),
            Estimator::Mlp(m) => Ok(m.jvp(&op.pinv_apply(y)?, &op.pinv_apply(t)?)),
            Estimator::Unrolled(u) => u.jvp(t, op),
            Estimator::PerOperator { members, .. } => Ok(members[self.lookup(op)?.1].jvp(&op.pinv_apply(t)?)),
            Estimator::Reynolds { base, group } => {
                let mut acc = RealVector::zeros(op.n());
                self.for_group(op, group, |tr, at| {
                    acc += tr.apply(&base.jvp_input(y, at, t)?);
                    Ok(())
                })?;
                Ok(acc / group.len() as f64)
            }
        }
    }

    /// `J^T c`.
    pub fn vjp_input(&self, y: &RealVector, op: &LinearOperator, c: &RealVector) -> Result<RealVector> {
        match self {
            Estimator::Affine(a) => op.pinv_adjoint_apply(&a.vjp_input(c)),
            Estimator::Mlp(m) => op.pinv_adjoint_apply(&m.vjp_input(&op.pinv_apply(y)?, c)),
            Estimator::Unrolled(u) => u.vjp_input(op, c),
            Estimator::PerOperator { members, .. } => {
                op.pinv_adjoint_apply(&members[self.lookup(op)?.1].vjp_input(c))
            }
            Estimator::Reynolds { base, group } => {
                let mut acc = RealVector::zeros(op.m());
                self.for_group(op, group, |tr, at| {
                    acc += base.vjp_input(y, at, &tr.apply_transpose(c))?;
                    Ok(())
                })?;
                Ok(acc / group.len() as f64)
            }
        }
    }

    /// Gradient of `c^T f(y, A)` with respect to the parameters.
    pub fn vjp_params(&self, y: &RealVector, op: &LinearOperator, c: &RealVector) -> Result<Vec<f64>> {
        match self {
            Estimator::Affine(a) => Ok(a.vjp_params(&op.pinv_apply(y)?, c)),
            Estimator::Mlp(m) => Ok(m.vjp_params(&op.pinv_apply(y)?, c)),
            Estimator::Unrolled(u) => u.vjp_params(y, op, c),
            Estimator::PerOperator { members, .. } => {
                let (off, k) = self.lookup(op)?;
                Ok(self.embed(off, members[k].vjp_params(&op.pinv_apply(y)?, c)))
            }
            Estimator::Reynolds { base, group } => {
                let mut acc = vec![0.0; self.num_params()];
                self.for_group(op, group, |tr, at| {
                    add_into(&mut acc, &base.vjp_params(y, at, &tr.apply_transpose(c))?, 1.0);
                    Ok(())
                })?;
                scale(&mut acc, 1.0 / group.len() as f64);
                Ok(acc)
            }
        }
    }

    /// Gradient of `u^T J(y) v` with respect to the parameters.
    pub fn mixed(&self, y: &RealVector, op: &LinearOperator, u: &RealVector, v: &RealVector) -> Result<Vec<f64>> {
        match self {
            Estimator::Affine(a) => Ok(a.mixed(u, &op.pinv_apply(v)?)),
            Estimator::Mlp(m) => Ok(m.mixed(&op.pinv_apply(y)?, u, &op.pinv_apply(v)?)),
            Estimator::Unrolled(un) => un.mixed(op, u, v),
            Estimator::PerOperator { members, .. } => {
                let (off, k) = self.lookup(op)?;
                Ok(self.embed(off, members[k].mixed(u, &op.pinv_apply(v)?)))
            }
            Estimator::Reynolds { base, group } => {
                let mut acc = vec![0.0; self.num_params()];
                self.for_group(op, group, |tr, at| {
                    add_into(&mut acc, &base.mixed(y, at, &tr.apply_transpose(u), v)?, 1.0);
                    Ok(())
                })?;
                scale(&mut acc, 1.0 / group.len() as f64);
                Ok(acc)
            }
        }
    }

    /// Dense input Jacobian `df/dy` (`n x m`).
    pub fn jacobian(&self, y: &RealVector, op: &LinearOperator) -> Result<RealMatrix> {
        linalg::matrix_of(op.n(), op.m(), |e| self.jvp_input(y, op, e))
    }
}

pub(crate) fn add_into(acc: &mut [f64], g: &[f64], s: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += s * b;
    }
}

pub(crate) fn scale(acc: &mut [f64], s: f64) {
    acc.iter_mut().for_each(|a| *a *= s);
}

/// The measurement-space map `g(y) = A f(y, A)` used by denoising-type losses.
/// For the identity operator `g = f`.
pub struct Lifted<'a> {
    pub est: &'a Estimator,
    pub op: &'a LinearOperator,
}

impl<'a> Lifted<'a> {
    pub fn new(est: &'a Estimator, op: &'a LinearOperator) -> Self {
        Lifted { est, op }
    }

    fn identity(&self) -> bool {
        matches!(self.op.kind(), OpKind::Identity)
    }

    fn push(&self, x: RealVector) -> Result<RealVector> {
        if self.identity() { Ok(x) } else { self.op.apply(&x) }
    }

    fn pull(&self, c: &RealVector) -> Result<RealVector> {
        if self.identity() { Ok(c.clone()) } else { self.op.adjoint(c) }
    }

    pub fn eval(&self, y: &RealVector) -> Result<RealVector> {
        self.push(self.est.forward(y, self.op)?)
    }

    pub fn jvp(&self, y: &RealVector, t: &RealVector) -> Result<RealVector> {
        self.push(self.est.jvp_input(y, self.op, t)?)
    }

    pub fn vjp_params(&self, y: &RealVector, c: &RealVector) -> Result<Vec<f64>> {
        self.est.vjp_params(y, self.op, &self.pull(c)?)
    }

    pub fn mixed(&self, y: &RealVector, u: &RealVector, v: &RealVector) -> Result<Vec<f64>> {
        self.est.mixed(y, self.op, &self.pull(u)?, v)
    }
}

/// How `tr(M dg/dy)` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceBackend {
    /// Exact, from the constant Jacobian of an affine estimator.
    Analytic,
    /// `w^T J w` with `w ~ N(0, M)`.
    Hutchinson { probes: usize },
    /// `(M w / tau)^T (g(y + tau w) - g(y))` with `w ~ N(0, I)`.
    Ramani { tau: f64, probes: usize },
}

impl TraceBackend {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TraceBackend::Hutchinson { probes } | TraceBackend::Ramani { probes, .. } if probes == 0 => {
                Err(Error::param("probes", "must be positive"))
            }
            TraceBackend::Ramani { tau, .. } if !(tau > 0.0) => Err(Error::param("tau", "must be positive")),
            _ => Ok(()),
        }
    }
}

/// Estimate of `tr(M J)` for `J = dg/dy`, with its parameter gradient when asked.
pub fn jacobian_trace(
    g: &Lifted,
    y: &RealVector,
    m: &RealMatrix,
    backend: TraceBackend,
    rng: &mut RngStream,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    backend.validate()?;
    let dim = y.len();
    if m.shape() != (dim, dim) {
        return Err(Error::shape("trace weight must be square in the measurement dimension"));
    }
    let np = g.est.num_params();
    let mut grad = if want_grad { Some(vec![0.0; np]) } else { None };
    let value = match backend {
        TraceBackend::Analytic => {
            if !g.est.is_affine() {
                return Err(Error::Capability("analytic trace needs an affine estimator".into()));
            }
            let mut s = 0.0;
            for i in 0..dim {
                let mut e = RealVector::zeros(dim);
                e[i] = 1.0;
                let u = m.row(i).transpose();
                s += u.dot(&g.jvp(y, &e)?);
                if let Some(gr) = grad.as_mut() {
                    add_into(gr, &g.mixed(y, &u, &e)?, 1.0);
                }
            }
            s
        }
        TraceBackend::Hutchinson { probes } => {
            let psd = linalg::min_eigenvalue(m) >= -1e-12 * m.amax().max(1e-300);
            let factor = if psd { Some(linalg::sqrt_factor(m)) } else { None };
            let mut s = 0.0;
            for _ in 0..probes {
                let z = RealVector::from_vec(rng.normal_vec(dim));
                let (u, v) = match &factor {
                    Some(l) => {
                        let w = l * &z;
                        (w.clone(), w)
                    }
                    None => (m.transpose() * &z, z),
                };
                s += u.dot(&g.jvp(y, &v)?);
                if let Some(gr) = grad.as_mut() {
                    add_into(gr, &g.mixed(y, &u, &v)?, 1.0);
                }
            }
            if let Some(gr) = grad.as_mut() {
                scale(gr, 1.0 / probes as f64);
            }
            s / probes as f64
        }
        TraceBackend::Ramani { tau, probes } => {
            let base = g.eval(y)?;
            let mut s = 0.0;
            for _ in 0..probes {
                let w = RealVector::from_vec(rng.normal_vec(dim));
                let u = m.transpose() * &w / tau;
                let yp = y + &w * tau;
                s += u.dot(&(g.eval(&yp)? - &base));
                if let Some(gr) = grad.as_mut() {
                    add_into(gr, &g.vjp_params(&yp, &u)?, 1.0);
                    add_into(gr, &g.vjp_params(y, &u)?, -1.0);
                }
            }
            if let Some(gr) = grad.as_mut() {
                scale(gr, 1.0 / probes as f64);
            }
            s / probes as f64
        }
    };
    Ok((value, grad))
}

/// Largest relative discrepancy between the analytic derivatives and central
/// finite differences, over random probe directions.
pub fn grad_check(est: &Estimator, y: &RealVector, op: &LinearOperator, probes: usize, rng: &mut RngStream) -> Result<f64> {
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
    let theta = est.params();
    let np = theta.len();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut shifted = est.clone();
    for _ in 0..probes {
        let c = RealVector::from_vec(rng.normal_vec(op.n()));
        let t = RealVector::from_vec(rng.normal_vec(op.m()));
        let d: Vec<f64> = rng.normal_vec(np);
        let step = |s: f64| -> Vec<f64> { theta.iter().zip(&d).map(|(p, q)| p + s * q).collect() };

        // parameter gradient
        let g = est.vjp_params(y, op, &c)?;
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        shifted.set_params(&step(h))?;
        let fp = c.dot(&shifted.forward(y, op)?);
        shifted.set_params(&step(-h))?;
        let fm = c.dot(&shifted.forward(y, op)?);
        worst = worst.max(rel(an, (fp - fm) / (2.0 * h)));

        // input Jacobian, forward and reverse
        let jt = est.jvp_input(y, op, &t)?;
        let fd = (est.forward(&(y + &t * h), op)? - est.forward(&(y - &t * h), op)?) / (2.0 * h);
        worst = worst.max(rel(c.dot(&jt), c.dot(&fd)));
        worst = worst.max(rel(est.vjp_input(y, op, &c)?.dot(&t), c.dot(&jt)));

        // parameter gradient of c^T J t
        let mg = est.mixed(y, op, &c, &t)?;
        let an: f64 = mg.iter().zip(&d).map(|(a, b)| a * b).sum();
        shifted.set_params(&step(h))?;
        let jp = c.dot(&shifted.jvp_input(y, op, &t)?);
        shifted.set_params(&step(-h))?;
        let jm = c.dot(&shifted.jvp_input(y, op, &t)?);
        worst = worst.max(rel(an, (jp - jm) / (2.0 * h)));
    }
    Ok(worst)
}

/// Serializable estimator description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Affine {
        #[serde(default)]
        constraint: Constraint,
    },
    BackprojectionMlp { hidden: Vec<usize> },
    Unrolled {
        steps: usize,
        #[serde(default = "unit_step")]
        step: f64,
    },
}

fn unit_step() -> f64 {
    1.0
}

impl EstimatorSpec {
    /// Build for signals of dimension `n`; the affine map starts at zero and the
    /// unrolled step at the identity.
    pub fn build(&self, n: usize, rng: &mut RngStream) -> Result<Estimator> {
        match self {
            EstimatorSpec::Affine { constraint } => Estimator::affine_zeros(n, *constraint),
            EstimatorSpec::BackprojectionMlp { hidden } => {
                let mut w = vec![n];
                w.extend(hidden);
                w.push(n);
                Estimator::mlp(&w, rng)
            }
            EstimatorSpec::Unrolled { steps, step } => Estimator::unrolled(n, *steps, *step),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_denoiser_example() {
        let w = RealMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e = Estimator::affine(w, RealVector::from_vec(vec![1.0, -1.0]), Constraint::None).unwrap();
        let op = LinearOperator::identity(2);
        let out = e.forward(&RealVector::from_vec(vec![1.0, 1.0]), &op).unwrap();
        assert_eq!(out.as_slice(), &[4.0, 6.0]);
    }

    #[test]
    fn analytic_trace_rejects_mlp() {
        let mut r = RngStream::new(0, 0);
        let e = Estimator::mlp(&[2, 3, 2], &mut r).unwrap();
        let op = LinearOperator::identity(2);
        let g = Lifted::new(&e, &op);
        let res = jacobian_trace(&g, &RealVector::zeros(2), &RealMatrix::identity(2, 2), TraceBackend::Analytic, &mut r, false);
        assert!(matches!(res, Err(Error::Capability(_))));
    }

    #[test]
    fn zero_diagonal_blind_spot() {
        let w = RealMatrix::from_element(3, 3, 0.7);
        let e = Estimator::affine(w, RealVector::zeros(3), Constraint::ZeroDiagonal).unwrap();
        let op = LinearOperator::identity(3);
        let j = e.jacobian(&RealVector::zeros(3), &op).unwrap();
        for i in 0..3 {
            assert_eq!(j[(i, i)], 0.0);
        }
    }
}
