//! Synthetic data sources with known priors, and oracle metrics.

use crate::error::{Error, Result};
use crate::estimators::{Affine, Estimator};
use crate::linalg::{RealMatrix, RealVector};
use crate::losses::{test_time_estimate, Batch, Item, TestTime};
use crate::noise::NoiseModel;
use crate::operators::{LinearOperator, OperatorDistribution};
use crate::priors::{GmmPrior, Prior};
use crate::rng::RngStream;

/// Signals from a prior, measured through a random operator with known noise.
#[derive(Clone, Debug)]
pub struct Testbed {
    pub prior: Prior,
    pub noise: NoiseModel,
    pub ops: OperatorDistribution,
    /// Draw signals by rejection on the positive orthant (Poisson and gamma noise).
    pub positive: bool,
    /// Attach an independent second measurement to every item.
    pub paired: bool,
}

impl Testbed {
    pub fn new(prior: Prior, noise: NoiseModel, ops: OperatorDistribution) -> Result<Self> {
        noise.validate()?;
        if prior.n() != ops.n() {
            return Err(Error::shape("prior and operators disagree on the signal size"));
        }
        let positive = matches!(noise, NoiseModel::Poisson { .. } | NoiseModel::Gamma { .. });
        Ok(Testbed { prior, noise, ops, positive, paired: false })
    }

    /// Denoising testbed.
    pub fn denoising(prior: Prior, noise: NoiseModel) -> Result<Self> {
        let n = prior.n();
        Self::new(prior, noise, OperatorDistribution::uniform(vec![LinearOperator::identity(n)])?)
    }

    pub fn with_pairs(mut self) -> Self {
        self.paired = true;
        self
    }

    pub fn n(&self) -> usize {
        self.prior.n()
    }

    pub fn item(&self, rng: &mut RngStream) -> Result<Item> {
        let x = if self.positive { self.prior.sample_positive(rng)? } else { self.prior.sample(rng) };
        let op = self.ops.sample(rng);
        let support = op.row_support();
        let clean = op.apply(&x)?;
        let y = self.noise.corrupt_on(&clean, &support, rng)?;
        let mut item = Item::new(y, op);
        if self.paired {
            item = item.with_pair(self.noise.corrupt_on(&clean, &support, rng)?);
        }
        Ok(item.with_x(x))
    }

    /// `count` items, item `i` drawn from `rng.derive(i)`.
    pub fn batch(&self, count: usize, rng: &RngStream) -> Result<Batch> {
        let items = (0..count).map(|i| self.item(&mut rng.derive(i as u64))).collect::<Result<_>>()?;
        Ok(Batch::new(items))
    }
}

/// Train, self-supervised validation and oracle test sets.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Batch,
    pub val: Batch,
    pub test: Option<Batch>,
}

impl TrainData {
    /// Hold out the last `val_fraction` of `all` (at least one item) for validation.
    pub fn holdout(all: Batch, val_fraction: f64, test: Option<Batch>) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::param("val_fraction", "must lie in [0, 1)"));
        }
        if all.len() < 2 {
            return Err(Error::shape("need at least two training items"));
        }
        let nval = ((all.len() as f64 * val_fraction).round() as usize).clamp(1, all.len() - 1);
        let mut items = all.items;
        let val = items.split_off(items.len() - nval);
        Ok(TrainData { train: Batch::new(items), val: Batch::new(val), test })
    }
}

/// `(1/n) E||f(y, A) - x||^2` over items with clean signals, with its standard error.
pub fn oracle_mse(est: &Estimator, batch: &Batch) -> Result<(f64, f64)> {
    let v = batch
        .items
        .iter()
        .map(|it| {
            let x = it.x.as_ref().ok_or_else(|| Error::Capability("oracle metrics need clean signals".into()))?;
            Ok((est.forward(&it.y, &it.op)? - x).norm_squared() / x.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::linalg::mean_se(&v))
}

/// Error restricted to the nullspace of each item's operator, `(1/n) E||(I - A^+ A)(f - x)||^2`.
pub fn nullspace_mse(est: &Estimator, batch: &Batch) -> Result<(f64, f64)> {
    let v = batch
        .items
        .iter()
        .map(|it| {
            let x = it.x.as_ref().ok_or_else(|| Error::Capability("oracle metrics need clean signals".into()))?;
            let e = est.forward(&it.y, &it.op)? - x;
            let pn = &e - it.op.pinv_apply(&it.op.apply(&e)?)?;
            Ok(pn.norm_squared() / x.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::linalg::mean_se(&v))
}

/// Exact `(1/n) E||W (x + w) + b - x||^2` for a denoiser, from the signal
/// moments and the noise covariance.
pub fn affine_denoising_mse(a: &Affine, mean: &RealVector, cov: &RealMatrix, noise_cov: &RealMatrix) -> f64 {
    let n = mean.len();
    let d = &a.w - RealMatrix::identity(n, n);
    let bias = &d * mean + &a.b;
    ((&d * cov * d.transpose()).trace() + bias.norm_squared() + (&a.w * noise_cov * a.w.transpose()).trace()) / n as f64
}

/// Single Gaussian `N(0, s0^2 I)` in dimension `n`.
pub fn single_gaussian(n: usize, s0: f64) -> Result<Prior> {
    Ok(Prior::Gmm(GmmPrior::isotropic(vec![1.0], vec![RealVector::zeros(n)], &[s0 * s0])?))
}

/// Two well-separated isotropic components at `+-mu 1`, each with variance `s2`.
pub fn two_component(n: usize, mu: f64, s2: f64) -> Result<Prior> {
    let m = RealVector::from_element(n, mu);
    Ok(Prior::Gmm(GmmPrior::isotropic(vec![0.5, 0.5], vec![m.clone(), -m], &[s2, s2])?))
}

/// Two components on the positive orthant, for Poisson and gamma noise.
pub fn positive_two_component(n: usize) -> Result<Prior> {
    let a = RealVector::from_element(n, 6.0);
    let b = RealVector::from_fn(n, |i, _| if i % 2 == 0 { 10.0 } else { 8.0 });
    Ok(Prior::Gmm(GmmPrior::isotropic(vec![0.4, 0.6], vec![a, b], &[1.0, 1.5])?))
}

/// Zero-mean Gaussian with `rank` strong directions of variance `strong` and
/// `n - rank` weak ones of variance `weak`, in a fixed rotated basis.
pub fn low_rank_gaussian(n: usize, rank: usize, strong: f64, weak: f64, seed: u64) -> Result<Prior> {
    if rank > n {
        return Err(Error::param("rank", "must not exceed n"));
    }
    let mut rng = RngStream::new(seed, 0);
    let g = RealMatrix::from_fn(n, n, |_, _| rng.normal());
    let q = g.qr().q();
    let d = RealVector::from_fn(n, |i, _| if i < rank { strong } else { weak });
    let cov = &q * RealMatrix::from_diagonal(&d) * q.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(Prior::Gmm(GmmPrior::new(vec![1.0], vec![RealVector::zeros(n)], vec![cov])?))
}

/// Fixed-operator testbed helper.
pub fn fixed_operator(op: LinearOperator) -> Result<OperatorDistribution> {
    OperatorDistribution::finite(vec![op], vec![1.0])
}

/// Oracle errors `(mse, se, nullspace mse, se)` of a test-time averaged reconstruction.
pub fn test_time_errors(est: &Estimator, batch: &Batch, mode: &TestTime, rng: &RngStream) -> Result<(f64, f64, f64, f64)> {
    let mut full = Vec::with_capacity(batch.len());
    let mut null = Vec::with_capacity(batch.len());
    for (i, it) in batch.items.iter().enumerate() {
        let x = it.x.as_ref().ok_or_else(|| Error::Capability("oracle metrics need clean signals".into()))?;
        let e = test_time_estimate(mode, est, &it.y, &it.op, &mut rng.derive(i as u64))? - x;
        let pn = &e - it.op.pinv_apply(&it.op.apply(&e)?)?;
        full.push(e.norm_squared() / x.len() as f64);
        null.push(pn.norm_squared() / x.len() as f64);
    }
    let (a, b) = crate::linalg::mean_se(&full);
    let (c, d) = crate::linalg::mean_se(&null);
    Ok((a, b, c, d))
}
