//! Learning in the nullspace of a single inpainting mask from a shift-invariant prior.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::linalg::{mean_se, RealMatrix, RealVector};
use crate::losses::{Batch, Consistency, Loss, SplitDistribution};
use crate::noise::NoiseModel;
use crate::operators::{is_equivariant, GroupAction, LinearOperator};
use crate::priors::{AtomPrior, Prior};
use crate::rng::RngStream;

use super::optim::OptimizerSpec;
use super::testbed::{fixed_operator, nullspace_mse, Testbed, TrainData};
use super::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullspaceConfig {
    pub n: usize,
    /// Random band-limited patterns; the prior holds every shift of each.
    pub patterns: usize,
    pub harmonics: Vec<usize>,
    pub sigma: f64,
    pub mask: Vec<bool>,
    pub train_items: usize,
    pub test_items: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Unrolled iterations of the trained reconstructor.
    pub steps: usize,
    pub split_q: f64,
    /// Harmonic removed by the equivariant control operator.
    pub control_harmonic: usize,
}

impl Default for NullspaceConfig {
    fn default() -> Self {
        NullspaceConfig {
            n: 8,
            patterns: 64,
            harmonics: vec![1, 2],
            sigma: 0.6,
            mask: vec![true, true, true, false, true, true, false, true],
            train_items: 1024,
            test_items: 4000,
            lr: 0.01,
            epochs: 300,
            steps: 5,
            split_q: 0.6,
            control_harmonic: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullspaceRow {
    pub method: String,
    pub null_mse: f64,
    pub se: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullspaceResult {
    /// Posterior-mean nullspace error under the mask.
    pub oracle: f64,
    /// `E ||(I - A^+ A) x||^2 / n` under the mask.
    pub prior_null: f64,
    /// The same prior quantity under the equivariant control operator.
    pub control_prior_null: f64,
    pub rows: Vec<NullspaceRow>,
}

impl NullspaceResult {
    pub fn row(&self, method: &str) -> Option<&NullspaceRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Atoms `T_g p` for random patterns `p` in the span of the given harmonics.
pub fn shift_invariant_atoms(n: usize, harmonics: &[usize], patterns: usize, rng: &mut RngStream) -> Result<Prior> {
    let mut basis = Vec::new();
    for &k in harmonics {
        if k == 0 || 2 * k > n {
            return Err(Error::param("harmonics", "must lie in 1..=n/2"));
        }
        let w = 2.0 * PI * k as f64 / n as f64;
        basis.push(RealVector::from_fn(n, |t, _| (w * t as f64).cos()));
        if 2 * k < n {
            basis.push(RealVector::from_fn(n, |t, _| (w * t as f64).sin()));
        }
    }
    let group = GroupAction::circular_shifts(1, n);
    let mut atoms = Vec::with_capacity(patterns * n);
    for _ in 0..patterns {
        let mut p = RealVector::zeros(n);
        for b in &basis {
            p += b * rng.normal();
        }
        atoms.extend(group.elements.iter().map(|t| t.apply(&p)));
    }
    Ok(Prior::Atoms(AtomPrior::uniform(atoms)?))
}

/// Circulant projector that removes harmonic `k`; it commutes with shifts.
pub fn harmonic_notch(n: usize, k: usize) -> Result<LinearOperator> {
    if k == 0 || 2 * k > n {
        return Err(Error::param("k", "must lie in 1..=n/2"));
    }
    let c = if 2 * k == n { 1.0 } else { 2.0 };
    let h: Vec<f64> = (0..n)
        .map(|t| f64::from(u8::from(t == 0)) - c * (2.0 * PI * (k * t) as f64 / n as f64).cos() / n as f64)
        .collect();
    LinearOperator::dense(RealMatrix::from_fn(n, n, |i, j| h[(i + n - j) % n])).with_shape(1, n)
}

fn prior_nullspace(batch: &Batch, op: &LinearOperator) -> Result<f64> {
    let mut v = Vec::with_capacity(batch.len());
    for it in &batch.items {
        let x = it.x.as_ref().ok_or_else(|| Error::Capability("needs clean signals".into()))?;
        v.push((x - op.pinv_apply(&op.apply(x)?)?).norm_squared() / x.len() as f64);
    }
    Ok(mean_se(&v).0)
}

/// Trains MC, EI and ESPLIT reconstructors on a single mask, plus EI on the
/// equivariant control, and reports nullspace errors against the oracle.
pub fn nullspace_experiment(cfg: &NullspaceConfig, seed: u64) -> Result<NullspaceResult> {
    let n = cfg.n;
    if cfg.mask.len() != n {
        return Err(Error::shape("mask length differs from n"));
    }
    let prior = shift_invariant_atoms(n, &cfg.harmonics, cfg.patterns, &mut RngStream::new(seed, 30))?;
    let noise = NoiseModel::GaussianIso { sigma: cfg.sigma };
    let group = GroupAction::circular_shifts(1, n);
    let mask = LinearOperator::diagonal_mask(cfg.mask.clone()).with_shape(1, n)?;
    if is_equivariant(&mask, &group, 1e-9)? {
        log::warn!("mask commutes with shifts; the nullspace cannot be learned");
    }
    let control = harmonic_notch(n, cfg.control_harmonic)?;

    let tb = Testbed::new(prior.clone(), noise.clone(), fixed_operator(mask.clone())?)?;
    let data = TrainData::holdout(tb.batch(cfg.train_items, &RngStream::new(seed, 31))?, 0.2, None)?;
    let test = tb.batch(cfg.test_items, &RngStream::new(seed, 32))?;
    let mut oracle = Vec::with_capacity(test.len());
    for it in &test.items {
        let e = prior.posterior_mean(&noise, &mask, &it.y)? - it.x.as_ref().expect("testbed items carry x");
        oracle.push((&e - mask.pinv_apply(&mask.apply(&e)?)?).norm_squared() / n as f64);
    }

    let ctb = Testbed::new(prior, noise.clone(), fixed_operator(control.clone())?)?;
    let cdata = TrainData::holdout(ctb.batch(cfg.train_items, &RngStream::new(seed, 33))?, 0.2, None)?;
    let ctest = ctb.batch(cfg.test_items, &RngStream::new(seed, 34))?;

    let tc = TrainConfig { optimizer: OptimizerSpec::adam(cfg.lr), epochs: cfg.epochs, patience: cfg.epochs, seed, ..Default::default() };
    let consistency = Consistency::for_noise(Some(&noise));
    let ei = Loss::Ei { group: group.clone(), lambda: 1.0, consistency, all_elements: false };
    let esplit = Loss::Esplit { group, split: SplitDistribution::uniform(cfg.split_q, n), all_elements: false };
    let runs: Vec<(&str, Loss, &TrainData, &Batch)> = vec![
        ("mc", Loss::Mc, &data, &test),
        ("ei", ei.clone(), &data, &test),
        ("esplit", esplit, &data, &test),
        ("ei_equivariant_control", ei, &cdata, &ctest),
    ];
    let mut rows = Vec::with_capacity(runs.len());
    for (method, loss, d, t) in runs {
        let out = train(&loss, Estimator::unrolled(n, cfg.steps, 1.0)?, d, &tc)?;
        let (null_mse, se) = nullspace_mse(&out.est, t)?;
        rows.push(NullspaceRow { method: method.into(), null_mse, se, best_epoch: out.best_epoch });
    }
    Ok(NullspaceResult {
        oracle: mean_se(&oracle).0,
        prior_null: prior_nullspace(&test, &mask)?,
        control_prior_null: prior_nullspace(&ctest, &control)?,
        rows,
    })
}
