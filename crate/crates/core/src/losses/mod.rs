//! Supervised and self-supervised training losses.
//!
//! A loss is evaluated on a [`Batch`] and returns its mean value, the standard
//! error of that mean across items, the number of resampled terms and
//! optionally the parameter gradient. Evaluation is a pure function of
//! `(loss, batch, parameters, rng)`: item `i` draws from `rng.derive(i)`.

mod masks;
mod testtime;

pub use masks::{
    neighbor_pairs, q_bar_bernoulli, q_diagonal_bernoulli, zero_fill, MaskDraw, MaskGenerator, Split,
    SplitDistribution,
};
pub use testtime::{noisier2noise_affine, noisier2noise_correct, split_weights, test_time_estimate, TestTime};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{add_into, jacobian_trace, scale, Estimator, Lifted, TraceBackend};
use crate::linalg::{self, RealMatrix, RealVector};
use crate::noise::{check_alpha, zero_outside, NoiseModel};
use crate::operators::{GroupAction, LinearOperator, OperatorDistribution};
use crate::rng::RngStream;

/// One training example.
#[derive(Clone, Debug)]
pub struct Item {
    pub y: RealVector,
    pub op: Arc<LinearOperator>,
    /// Clean signal, only for supervised losses and oracle metrics.
    pub x: Option<RealVector>,
    /// Independent second measurement of the same signal.
    pub y_pair: Option<RealVector>,
    /// Fixed split groups for splitting losses; drawn at random when absent.
    pub split: Option<Vec<bool>>,
    pub weight: f64,
}

impl Item {
    pub fn new(y: RealVector, op: Arc<LinearOperator>) -> Self {
        Item { y, op, x: None, y_pair: None, split: None, weight: 1.0 }
    }

    pub fn with_x(mut self, x: RealVector) -> Self {
        self.x = Some(x);
        self
    }

    pub fn with_pair(mut self, y2: RealVector) -> Self {
        self.y_pair = Some(y2);
        self
    }

    pub fn with_split(mut self, groups: Vec<bool>) -> Self {
        self.split = Some(groups);
        self
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub items: Vec<Item>,
}

impl Batch {
    pub fn new(items: Vec<Item>) -> Self {
        Batch { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        Batch { items: idx.iter().map(|&i| self.items[i].clone()).collect() }
    }
}

#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub se: f64,
    pub count: usize,
    pub grad: Option<Vec<f64>>,
    /// Per-item means of auxiliary quantities (UNSURE constraint values).
    pub aux: Vec<f64>,
}

/// Distance used by recorrupted losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    L2,
    /// Negative log-likelihood of the noise model.
    Nll,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PureSign {
    /// `y_i (f_i(y) - f_i(y - gamma e_i))`, unbiased for Poisson noise.
    #[default]
    Minus,
    /// `y_i (f_i(y + gamma e_i) - f_i(y))`.
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PureBackend {
    ExactShift {
        #[serde(default)]
        sign: PureSign,
    },
    /// Randomised finite differences with `Sigma ~ gamma diag(y)`.
    FdApprox { tau: f64, probes: usize },
}

/// Covariance basis `Psi_j` for the unknown-noise SURE variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovBasis {
    /// `Psi = I`: unknown noise level.
    Scalar,
    /// `Psi_j = e_j e_j^T`: unknown independent variances.
    Diagonal,
    /// Symmetric circulant bands `Psi_k`, `k = 0..=bandwidth`: unknown stationary correlation.
    Circulant { bandwidth: usize },
}

impl CovBasis {
    pub fn matrices(&self, m: usize) -> Vec<RealMatrix> {
        match self {
            CovBasis::Scalar => vec![RealMatrix::identity(m, m)],
            CovBasis::Diagonal => (0..m)
                .map(|j| {
                    let mut p = RealMatrix::zeros(m, m);
                    p[(j, j)] = 1.0;
                    p
                })
                .collect(),
            CovBasis::Circulant { bandwidth } => (0..=*bandwidth)
                .map(|k| {
                    let mut p = RealMatrix::zeros(m, m);
                    for i in 0..m {
                        p[(i, (i + k) % m)] += 1.0;
                        if k != 0 {
                            p[((i + k) % m, i)] += 1.0;
                        }
                    }
                    p
                })
                .collect(),
        }
    }
}

/// Measurement-consistency term used inside MOI and EI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Consistency {
    Mc,
    Sure { noise: NoiseModel, backend: TraceBackend },
    Gr2r { noise: NoiseModel, alpha: f64 },
}

impl Consistency {
    /// Plain consistency without noise, SURE for Gaussian noise, recorruption otherwise.
    pub fn for_noise(noise: Option<&NoiseModel>) -> Consistency {
        match noise {
            None => Consistency::Mc,
            Some(NoiseModel::GaussianIso { sigma }) if *sigma == 0.0 => Consistency::Mc,
            Some(n) if n.is_gaussian() => {
                Consistency::Sure { noise: n.clone(), backend: TraceBackend::Hutchinson { probes: 1 } }
            }
            Some(n) => Consistency::Gr2r { noise: n.clone(), alpha: crate::noise::DEFAULT_ALPHA },
        }
    }
}

/// Splitting-loss variants sharing one split draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MsplitVariant {
    /// `||A f(y1, A1) - y||^2`.
    Plain,
    /// Residual weighted by `Q_{A1}^{-1}`.
    Weighted,
    /// `||A2 f(y1, A1) - y2||^2`.
    Ssdu,
    /// Recorruption on `y1` plus the held-out term.
    Gr2r { noise: NoiseModel, alpha: f64 },
}

#[derive(Clone, Debug)]
pub enum Loss {
    Supervised,
    /// `||A f(y, A) - y||^2 / m`.
    Mc,
    Noise2Noise,
    R2r { noise: NoiseModel, alpha: f64, resamples: usize, metric: Metric },
    Sure { noise: NoiseModel, backend: TraceBackend },
    Pure { gamma: f64, backend: PureBackend },
    Gsure { noise: NoiseModel, backend: TraceBackend },
    Unsure { basis: CovBasis, eta: Vec<f64>, backend: TraceBackend },
    SplitCv { masks: MaskGenerator },
    Msplit { split: SplitDistribution, variant: MsplitVariant },
    Moi { ops: OperatorDistribution, lambda: f64, consistency: Consistency },
    Ei { group: GroupAction, lambda: f64, consistency: Consistency, all_elements: bool },
    Esplit { group: GroupAction, split: SplitDistribution, all_elements: bool },
    /// Train `f(y + tau w) ~ y`; correct at test time.
    Noisier2Noise { noise: NoiseModel, tau: f64 },
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Supervised => "supervised",
            Loss::Mc => "mc",
            Loss::Noise2Noise => "n2n",
            Loss::R2r { .. } => "r2r",
            Loss::Sure { .. } => "sure",
            Loss::Pure { .. } => "pure",
            Loss::Gsure { .. } => "gsure",
            Loss::Unsure { .. } => "unsure",
            Loss::SplitCv { .. } => "split",
            Loss::Msplit { variant, .. } => match variant {
                MsplitVariant::Plain => "msplit",
                MsplitVariant::Weighted => "msplit_weighted",
                MsplitVariant::Ssdu => "ssdu",
                MsplitVariant::Gr2r { .. } => "gr2r_msplit",
            },
            Loss::Moi { .. } => "moi",
            Loss::Ei { .. } => "ei",
            Loss::Esplit { .. } => "esplit",
            Loss::Noisier2Noise { .. } => "noisier2noise",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Loss::R2r { noise, alpha, resamples, .. } => {
                noise.validate()?;
                check_alpha(*alpha)?;
                if *resamples == 0 {
                    return Err(Error::param("resamples", "must be positive"));
                }
            }
            Loss::Sure { noise, backend } => {
                if !noise.is_gaussian() {
                    return Err(Error::Capability("SURE needs Gaussian noise".into()));
                }
                noise.validate()?;
                backend.validate()?;
            }
            Loss::Pure { gamma, backend } => {
                if !(*gamma > 0.0) {
                    return Err(Error::param("gamma", "must be positive"));
                }
                if let PureBackend::FdApprox { tau, probes } = backend {
                    TraceBackend::Ramani { tau: *tau, probes: *probes }.validate()?;
                }
            }
            Loss::Gsure { noise, backend } => {
                noise.validate()?;
                backend.validate()?;
                match noise {
                    NoiseModel::Poisson { .. } => {
                        return Err(Error::Capability("generalized SURE needs a continuous noise model".into()))
                    }
                    NoiseModel::Gamma { l } if *l <= 1.0 => {
                        return Err(Error::param("l", "generalized SURE for gamma noise needs l > 1"))
                    }
                    _ => {}
                }
            }
            Loss::Unsure { basis, eta, backend } => {
                backend.validate()?;
                if let CovBasis::Scalar = basis {
                    if eta.len() != 1 {
                        return Err(Error::shape("scalar basis needs one multiplier"));
                    }
                }
            }
            Loss::Msplit { split, variant } => {
                split.validate()?;
                if let MsplitVariant::Gr2r { alpha, noise } = variant {
                    check_alpha(*alpha)?;
                    noise.validate()?;
                }
            }
            Loss::Moi { lambda, .. } | Loss::Ei { lambda, .. } if !(*lambda >= 0.0) => {
                return Err(Error::param("lambda", "must be non-negative"));
            }
            Loss::Esplit { split, .. } => split.validate()?,
            Loss::Noisier2Noise { tau, noise } => {
                if !(*tau > 0.0) {
                    return Err(Error::param("tau", "must be positive"));
                }
                if !noise.is_gaussian() {
                    return Err(Error::Capability("noisier2noise is implemented for Gaussian noise".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Value and optional parameter gradient of one item's loss.
struct Term {
    value: f64,
    grad: Option<Vec<f64>>,
    aux: Vec<f64>,
}

struct Ctx<'a> {
    est: &'a Estimator,
    want: bool,
}

impl<'a> Ctx<'a> {
    fn zero(&self) -> Option<Vec<f64>> {
        if self.want { Some(vec![0.0; self.est.num_params()]) } else { None }
    }

    /// Accumulate the gradient of `c^T f(y, A)`.
    fn add_vjp(&self, g: &mut Option<Vec<f64>>, y: &RealVector, op: &LinearOperator, c: &RealVector) -> Result<()> {
        if let Some(g) = g.as_mut() {
            add_into(g, &self.est.vjp_params(y, op, c)?, 1.0);
        }
        Ok(())
    }
}

fn sq(r: &RealVector, norm: f64) -> (f64, RealVector) {
    (r.norm_squared() / norm, r * (2.0 / norm))
}

/// Evaluate `loss` on `batch`.
pub fn evaluate(loss: &Loss, batch: &Batch, est: &Estimator, rng: &RngStream, want_grad: bool) -> Result<LossEval> {
    loss.validate()?;
    if batch.is_empty() {
        return Err(Error::shape("empty batch"));
    }
    let ctx = Ctx { est, want: want_grad };
    let mut values = Vec::with_capacity(batch.len());
    let mut weights = Vec::with_capacity(batch.len());
    let mut grad = ctx.zero();
    let mut aux: Vec<f64> = Vec::new();
    let mut count = 0;
    for (i, item) in batch.items.iter().enumerate() {
        let mut r = rng.derive(i as u64);
        let (term, c) = item_loss(loss, item, &ctx, &mut r)?;
        if !term.value.is_finite() {
            return Err(Error::Divergence(format!("non-finite {} loss on item {i}", loss.name())));
        }
        count += c;
        values.push(term.value);
        weights.push(item.weight);
        if let (Some(g), Some(t)) = (grad.as_mut(), term.grad.as_ref()) {
            add_into(g, t, item.weight);
        }
        if aux.is_empty() {
            aux = vec![0.0; term.aux.len()];
        }
        for (a, t) in aux.iter_mut().zip(&term.aux) {
            *a += item.weight * t;
        }
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::param("weight", "batch weights must have positive sum"));
    }
    let value = values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let se = if weights.iter().all(|w| *w == weights[0]) {
        linalg::mean_se(&values).1
    } else {
        let s: f64 = values.iter().zip(&weights).map(|(v, w)| (w * (v - value)).powi(2)).sum();
        s.sqrt() / wsum
    };
    if let Some(g) = grad.as_mut() {
        scale(g, 1.0 / wsum);
    }
    aux.iter_mut().for_each(|a| *a /= wsum);
    Ok(LossEval { value, se, count, grad, aux })
}

/// Per-item values of a loss, in batch order.
pub fn item_values(loss: &Loss, batch: &Batch, est: &Estimator, rng: &RngStream) -> Result<Vec<f64>> {
    loss.validate()?;
    let ctx = Ctx { est, want: false };
    batch
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| Ok(item_loss(loss, item, &ctx, &mut rng.derive(i as u64))?.0.value))
        .collect()
}

/// Per-item values and gradients.
pub fn item_gradients(loss: &Loss, batch: &Batch, est: &Estimator, rng: &RngStream) -> Result<Vec<(f64, Vec<f64>)>> {
    loss.validate()?;
    let ctx = Ctx { est, want: true };
    batch
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let t = item_loss(loss, item, &ctx, &mut rng.derive(i as u64))?.0;
            Ok((t.value, t.grad.expect("gradient requested")))
        })
        .collect()
}

fn plain(value: f64, grad: Option<Vec<f64>>) -> Term {
    Term { value, grad, aux: vec![] }
}

fn item_loss(loss: &Loss, item: &Item, ctx: &Ctx, rng: &mut RngStream) -> Result<(Term, usize)> {
    let op = item.op.as_ref();
    let y = &item.y;
    let m = y.len() as f64;
    let n = op.n() as f64;
    linalg::check_len(y, op.m(), "measurement")?;
    Ok(match loss {
        Loss::Supervised => {
            let x = item.x.as_ref().ok_or_else(|| Error::Capability("supervised loss needs clean signals".into()))?;
            let f = ctx.est.forward(y, op)?;
            let (v, c) = sq(&(f - x), n);
            let mut g = ctx.zero();
            ctx.add_vjp(&mut g, y, op, &c)?;
            (plain(v, g), 1)
        }
        Loss::Mc => (consistency_term(&Consistency::Mc, y, op, ctx, rng)?, 1),
        Loss::Noise2Noise => {
            let y2 = item.y_pair.as_ref().ok_or_else(|| Error::Capability("noise2noise needs paired measurements".into()))?;
            let lift = Lifted::new(ctx.est, op);
            let (v, c) = sq(&(lift.eval(y)? - y2), m);
            let g = if ctx.want { Some(lift.vjp_params(y, &c)?) } else { None };
            (plain(v, g), 1)
        }
        Loss::R2r { noise, alpha, resamples, metric } => {
            let lift = Lifted::new(ctx.est, op);
            let support = op.row_support();
            let mut total = 0.0;
            let mut g = ctx.zero();
            for _ in 0..*resamples {
                let (y1, y2) = noise.gr2r_pair(y, *alpha, rng)?;
                let (y1, y2) = (zero_outside(&y1, &support), zero_outside(&y2, &support));
                let pred = lift.eval(&y1)?;
                let (v, c) = match metric {
                    Metric::L2 => sq(&(&pred - &y2), m),
                    Metric::Nll => nll_with_grad(noise, &pred, &y2)?,
                };
                total += v;
                if let Some(g) = g.as_mut() {
                    add_into(g, &lift.vjp_params(&y1, &c)?, 1.0);
                }
            }
            let k = *resamples as f64;
            if let Some(g) = g.as_mut() {
                scale(g, 1.0 / k);
            }
            (plain(total / k, g), *resamples)
        }
        Loss::Sure { noise, backend } => {
            let c = Consistency::Sure { noise: noise.clone(), backend: *backend };
            (consistency_term(&c, y, op, ctx, rng)?, 1)
        }
        Loss::Pure { gamma, backend } => (pure_term(*gamma, *backend, y, op, ctx, rng)?, 1),
        Loss::Gsure { noise, backend } => {
            let lift = Lifted::new(ctx.est, op);
            let h = noise.grad_log_h(y)?;
            let (v, c) = sq(&(lift.eval(y)? + &h), m);
            let eye = RealMatrix::identity(y.len(), y.len());
            let (div, dg) = jacobian_trace(&lift, y, &eye, *backend, rng, ctx.want)?;
            let mut g = if ctx.want { Some(lift.vjp_params(y, &c)?) } else { None };
            if let (Some(g), Some(dg)) = (g.as_mut(), dg) {
                add_into(g, &dg, 2.0 / m);
            }
            (plain(v + 2.0 * div / m, g), 1)
        }
        Loss::Unsure { basis, eta, backend } => (unsure_term(basis, eta, *backend, y, op, ctx, rng)?, 1),
        Loss::SplitCv { masks } => (split_cv_term(masks, y, op, ctx, rng)?, 1),
        Loss::Msplit { split, variant } => {
            let sp = draw_split(split, item, rng)?;
            let (v, g) = msplit_given(split, variant, &sp, y, op, ctx.est, ctx.want, rng)?;
            (plain(v, g), 1)
        }
        Loss::Moi { ops, lambda, consistency } => {
            let mut t = consistency_term(consistency, y, op, ctx, rng)?;
            let xh = ctx.est.forward(y, op)?;
            let op2 = ops.sample(rng);
            let y2 = op2.apply(&xh)?;
            let z = ctx.est.forward(&y2, &op2)?;
            let (v, c) = sq(&(&z - &xh), n);
            t.value += lambda * v;
            if let Some(g) = t.grad.as_mut() {
                let c = c * *lambda;
                add_into(g, &ctx.est.vjp_params(&y2, &op2, &c)?, 1.0);
                let back = op2.adjoint(&ctx.est.vjp_input(&y2, &op2, &c)?)? - &c;
                add_into(g, &ctx.est.vjp_params(y, op, &back)?, 1.0);
            }
            (t, 1)
        }
        Loss::Ei { group, lambda, consistency, all_elements } => {
            let mut t = consistency_term(consistency, y, op, ctx, rng)?;
            let xh = ctx.est.forward(y, op)?;
            let elems: Vec<&crate::operators::Transform> =
                if *all_elements { group.elements.iter().collect() } else { vec![group.sample(rng)] };
            let k = elems.len() as f64;
            for tr in elems {
                let xt = tr.apply(&xh);
                let yt = op.apply(&xt)?;
                let z = ctx.est.forward(&yt, op)?;
                let (v, c) = sq(&(&z - &xt), n);
                t.value += lambda * v / k;
                if let Some(g) = t.grad.as_mut() {
                    let c = c * (*lambda / k);
                    add_into(g, &ctx.est.vjp_params(&yt, op, &c)?, 1.0);
                    let back = op.adjoint(&ctx.est.vjp_input(&yt, op, &c)?)? - &c;
                    add_into(g, &ctx.est.vjp_params(y, op, &tr.apply_transpose(&back))?, 1.0);
                }
            }
            (t, 1)
        }
        Loss::Esplit { group, split, all_elements } => {
            let sp = draw_split(split, item, rng)?;
            let elems: Vec<&crate::operators::Transform> =
                if *all_elements { group.elements.iter().collect() } else { vec![group.sample(rng)] };
            let k = elems.len() as f64;
            let mut value = 0.0;
            let mut g = ctx.zero();
            for tr in elems {
                let a1g = sp.a1.compose_with_transform(tr)?;
                let xh = ctx.est.forward(&sp.y1, &a1g)?;
                let pred = op.apply(&tr.apply(&xh))?;
                let (v, c) = sq(&(pred - y), m);
                value += v / k;
                let cx = tr.apply_transpose(&op.adjoint(&c)?) / k;
                ctx.add_vjp(&mut g, &sp.y1, &a1g, &cx)?;
            }
            (plain(value, g), 1)
        }
        Loss::Noisier2Noise { noise, tau } => {
            let lift = Lifted::new(ctx.est, op);
            let support = op.row_support();
            let y1 = zero_outside(&(y + noise.gaussian_noise(y.len(), rng)? * *tau), &support);
            let (v, c) = sq(&(lift.eval(&y1)? - y), m);
            let g = if ctx.want { Some(lift.vjp_params(&y1, &c)?) } else { None };
            (plain(v, g), 1)
        }
    })
}

fn nll_with_grad(noise: &NoiseModel, pred: &RealVector, y: &RealVector) -> Result<(f64, RealVector)> {
    let m = y.len() as f64;
    let v = noise.nll(pred, y)?;
    let c = match noise {
        NoiseModel::Poisson { .. } => {
            pred.zip_map(y, |f, t| if t != 0.0 { (1.0 - t / f) / m } else { 1.0 / m })
        }
        NoiseModel::Gamma { .. } => pred.zip_map(y, |f, t| (1.0 / f - t / (f * f)) / m),
        _ => {
            let r = pred - y;
            let p = linalg::pinv(&noise.covariance(y.len())?, 1e-12);
            p * r * (2.0 / m)
        }
    };
    Ok((v, c))
}

/// Noise covariance restricted to the measured rows.
fn support_covariance(noise: &NoiseModel, op: &LinearOperator) -> Result<RealMatrix> {
    let mut s = noise.covariance(op.m())?;
    let sup = op.row_support();
    for i in 0..op.m() {
        for j in 0..op.m() {
            if !sup[i] || !sup[j] {
                s[(i, j)] = 0.0;
            }
        }
    }
    Ok(s)
}

fn consistency_term(c: &Consistency, y: &RealVector, op: &LinearOperator, ctx: &Ctx, rng: &mut RngStream) -> Result<Term> {
    let m = y.len() as f64;
    let lift = Lifted::new(ctx.est, op);
    match c {
        Consistency::Mc => {
            let (v, c) = sq(&(lift.eval(y)? - y), m);
            let g = if ctx.want { Some(lift.vjp_params(y, &c)?) } else { None };
            Ok(plain(v, g))
        }
        Consistency::Sure { noise, backend } => {
            let sigma = support_covariance(noise, op)?;
            let (v, c) = sq(&(lift.eval(y)? - y), m);
            let (tr, dg) = jacobian_trace(&lift, y, &sigma, *backend, rng, ctx.want)?;
            let mut g = if ctx.want { Some(lift.vjp_params(y, &c)?) } else { None };
            if let (Some(g), Some(dg)) = (g.as_mut(), dg) {
                add_into(g, &dg, 2.0 / m);
            }
            Ok(plain(v + 2.0 * tr / m - sigma.trace() / m, g))
        }
        Consistency::Gr2r { noise, alpha } => {
            let support = op.row_support();
            let (y1, y2) = noise.gr2r_pair(y, *alpha, rng)?;
            let (y1, y2) = (zero_outside(&y1, &support), zero_outside(&y2, &support));
            let (v, c) = sq(&(lift.eval(&y1)? - y2), m);
            let g = if ctx.want { Some(lift.vjp_params(&y1, &c)?) } else { None };
            Ok(plain(v, g))
        }
    }
}

fn pure_term(gamma: f64, backend: PureBackend, y: &RealVector, op: &LinearOperator, ctx: &Ctx, rng: &mut RngStream) -> Result<Term> {
    let m = y.len() as f64;
    for v in y.iter() {
        let z = v / gamma;
        if z < -1e-9 || (z - z.round()).abs() > 1e-6 * z.abs().max(1.0) {
            return Err(Error::Domain("PURE needs measurements that are non-negative multiples of gamma".into()));
        }
    }
    let lift = Lifted::new(ctx.est, op);
    let gy = lift.eval(y)?;
    let (v, c) = sq(&(&gy - y), m);
    let mut g = if ctx.want { Some(lift.vjp_params(y, &c)?) } else { None };
    let corr = match backend {
        PureBackend::ExactShift { sign } => {
            let mut s = 0.0;
            if let Some(g) = g.as_mut() {
                let w = y * (2.0 / m);
                let coef = if sign == PureSign::Minus { 1.0 } else { -1.0 };
                add_into(g, &lift.vjp_params(y, &w)?, coef);
            }
            for i in 0..y.len() {
                if y[i] == 0.0 {
                    continue;
                }
                let mut ys = y.clone();
                ys[i] += if sign == PureSign::Minus { -gamma } else { gamma };
                let gs = lift.eval(&ys)?;
                s += y[i] * if sign == PureSign::Minus { gy[i] - gs[i] } else { gs[i] - gy[i] };
                if let Some(g) = g.as_mut() {
                    let mut e = RealVector::zeros(y.len());
                    e[i] = 2.0 * y[i] / m;
                    let coef = if sign == PureSign::Minus { -1.0 } else { 1.0 };
                    add_into(g, &lift.vjp_params(&ys, &e)?, coef);
                }
            }
            2.0 * s / m
        }
        PureBackend::FdApprox { tau, probes } => {
            let w = RealMatrix::from_diagonal(&(y * gamma));
            let (tr, dg) = jacobian_trace(&lift, y, &w, TraceBackend::Ramani { tau, probes }, rng, ctx.want)?;
            if let (Some(g), Some(dg)) = (g.as_mut(), dg) {
                add_into(g, &dg, 2.0 / m);
            }
            2.0 * tr / m
        }
    };
    Ok(plain(v + corr, g))
}

fn unsure_term(
    basis: &CovBasis,
    eta: &[f64],
    backend: TraceBackend,
    y: &RealVector,
    op: &LinearOperator,
    ctx: &Ctx,
    rng: &mut RngStream,
) -> Result<Term> {
    let m = y.len() as f64;
    let psi = basis.matrices(y.len());
    if psi.len() != eta.len() {
        return Err(Error::shape(format!("basis has {} elements, {} multipliers given", psi.len(), eta.len())));
    }
    let lift = Lifted::new(ctx.est, op);
    let (v, c) = sq(&(lift.eval(y)? - y), m);
    let mut g = if ctx.want { Some(lift.vjp_params(y, &c)?) } else { None };
    let mut sig = RealMatrix::zeros(y.len(), y.len());
    for (p, e) in psi.iter().zip(eta) {
        sig += p * *e;
    }
    // per-element traces tr(Psi_j J), sharing probes
    let dim = y.len();
    let mut traces = vec![0.0; psi.len()];
    let mut div_grad = ctx.zero();
    match backend {
        TraceBackend::Analytic => {
            if !ctx.est.is_affine() {
                return Err(Error::Capability("analytic trace needs an affine estimator".into()));
            }
            let mut jac = RealMatrix::zeros(dim, dim);
            for i in 0..dim {
                let mut e = RealVector::zeros(dim);
                e[i] = 1.0;
                jac.set_column(i, &lift.jvp(y, &e)?);
                if let Some(dg) = div_grad.as_mut() {
                    add_into(dg, &lift.mixed(y, &sig.row(i).transpose(), &e)?, 1.0);
                }
            }
            for (t, p) in traces.iter_mut().zip(&psi) {
                *t = (p * &jac).trace();
            }
        }
        TraceBackend::Hutchinson { probes } | TraceBackend::Ramani { probes, .. } => {
            let base = lift.eval(y)?;
            for _ in 0..probes {
                let z = RealVector::from_vec(rng.normal_vec(dim));
                let jz = match backend {
                    TraceBackend::Ramani { tau, .. } => (lift.eval(&(y + &z * tau))? - &base) / tau,
                    _ => lift.jvp(y, &z)?,
                };
                for (t, p) in traces.iter_mut().zip(&psi) {
                    *t += (p.transpose() * &z).dot(&jz) / probes as f64;
                }
                if let Some(dg) = div_grad.as_mut() {
                    let u = sig.transpose() * &z;
                    let gz = match backend {
                        TraceBackend::Ramani { tau, .. } => {
                            let mut a = lift.vjp_params(&(y + &z * tau), &(&u / tau))?;
                            add_into(&mut a, &lift.vjp_params(y, &(&u / tau))?, -1.0);
                            a
                        }
                        _ => lift.mixed(y, &u, &z)?,
                    };
                    add_into(dg, &gz, 1.0 / probes as f64);
                }
            }
        }
    }
    let penalty: f64 = traces.iter().zip(eta).map(|(t, e)| t * e).sum();
    if let (Some(g), Some(dg)) = (g.as_mut(), div_grad) {
        add_into(g, &dg, 2.0 / m);
    }
    Ok(Term { value: v + 2.0 * penalty / m, grad: g, aux: traces.iter().map(|t| 2.0 * t / m).collect() })
}

fn split_cv_term(masks: &MaskGenerator, y: &RealVector, op: &LinearOperator, ctx: &Ctx, rng: &mut RngStream) -> Result<Term> {
    if op.n() != op.m() {
        return Err(Error::Capability("cross-validation splits are for denoising".into()));
    }
    if let MaskGenerator::Neighbor2Neighbor { h, w } = masks {
        masks.validate(y.len())?;
        let (inp, tgt) = neighbor_pairs(*h, *w, rng);
        let k = inp.len();
        let s1 = RealVector::from_iterator(k, inp.iter().map(|&i| y[i]));
        let s2 = RealVector::from_iterator(k, tgt.iter().map(|&i| y[i]));
        let sub = LinearOperator::identity(k);
        let (v, c) = sq(&(ctx.est.forward(&s1, &sub)? - s2), k as f64);
        let mut g = ctx.zero();
        ctx.add_vjp(&mut g, &s1, &sub, &c)?;
        return Ok(plain(v, g));
    }
    let draw = masks.generate(y, rng)?;
    let n = y.len() as f64;
    let f = ctx.est.forward(&draw.input, op)?;
    let r = RealVector::from_iterator(y.len(), (0..y.len()).map(|i| if draw.keep[i] { 0.0 } else { f[i] - y[i] }));
    let (v, c) = sq(&r, n);
    let mut g = ctx.zero();
    ctx.add_vjp(&mut g, &draw.input, op, &c)?;
    Ok(plain(v, g))
}

fn draw_split(split: &SplitDistribution, item: &Item, rng: &mut RngStream) -> Result<Split> {
    match &item.split {
        Some(g) => split.split_with(&item.op, &item.y, g),
        None => split.sample(&item.op, &item.y, rng),
    }
}

/// Splitting loss for a given split of one measurement.
#[allow(clippy::too_many_arguments)]
pub fn msplit_given(
    split: &SplitDistribution,
    variant: &MsplitVariant,
    sp: &Split,
    y: &RealVector,
    op: &LinearOperator,
    est: &Estimator,
    want_grad: bool,
    rng: &mut RngStream,
) -> Result<(f64, Option<Vec<f64>>)> {
    let ctx = Ctx { est, want: want_grad };
    let m = y.len() as f64;
    let xh = est.forward(&sp.y1, &sp.a1)?;
    let mut g = ctx.zero();
    let value = match variant {
        MsplitVariant::Plain => {
            let (v, c) = sq(&(op.apply(&xh)? - y), m);
            ctx.add_vjp(&mut g, &sp.y1, &sp.a1, &op.adjoint(&c)?)?;
            v
        }
        MsplitVariant::Weighted => {
            let q = split.q_diagonal(&sp.a1)?;
            let r = op.apply(&xh)? - y;
            let w = RealVector::from_iterator(q.len(), q.iter().map(|v| 1.0 / v));
            let v = r.iter().zip(w.iter()).map(|(a, b)| a * a * b).sum::<f64>() / m;
            let c = r.component_mul(&w) * (2.0 / m);
            ctx.add_vjp(&mut g, &sp.y1, &sp.a1, &op.adjoint(&c)?)?;
            v
        }
        MsplitVariant::Ssdu => {
            let (v, c) = sq(&(sp.a2.apply(&xh)? - &sp.y2), m);
            ctx.add_vjp(&mut g, &sp.y1, &sp.a1, &sp.a2.adjoint(&c)?)?;
            v
        }
        MsplitVariant::Gr2r { noise, alpha } => {
            let (ya, yb) = noise.gr2r_pair(&sp.y1, *alpha, rng)?;
            let (ya, yb) = (zero_fill(&ya, &sp.rows1), zero_fill(&yb, &sp.rows1));
            let xa = est.forward(&ya, &sp.a1)?;
            let (v1, c1) = sq(&(sp.a1.apply(&xa)? - yb), m);
            ctx.add_vjp(&mut g, &ya, &sp.a1, &sp.a1.adjoint(&c1)?)?;
            let (v2, c2) = sq(&(sp.a2.apply(&xh)? - &sp.y2), m);
            ctx.add_vjp(&mut g, &sp.y1, &sp.a1, &sp.a2.adjoint(&c2)?)?;
            v1 + v2
        }
    };
    Ok((value, g))
}
