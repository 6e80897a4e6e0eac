//! Loss and gradient variance probes, the optimality-gap sweep and the
//! Noisier2Noise/R2R equivalence check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::testbed::{affine_denoising_mse, oracle_mse, two_component, Testbed, TrainData};
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::estimators::{Affine, Estimator, EstimatorSpec, TraceBackend};
use crate::linalg::{self, RealMatrix, RealVector};
use crate::losses::{noisier2noise_affine, Loss, Metric};
use crate::noise::NoiseModel;
use crate::operators::LinearOperator;
use crate::priors::{linear_mmse, mmse, MmseMethod, Prior};
use crate::rng::RngStream;

fn iso_sigma(noise: &NoiseModel) -> Result<f64> {
    match noise {
        NoiseModel::GaussianIso { sigma } => Ok(*sigma),
        _ => Err(Error::Capability("variance probes are defined for isotropic Gaussian noise".into())),
    }
}

/// Per-sample contributions `(a_i - abar)^2 - (b_i - bbar)^2` whose mean is the
/// variance difference.
fn variance_gap(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64) {
    let (ma, _) = linalg::mean_se(a);
    let (mb, _) = linalg::mean_se(b);
    let n = a.len() as f64;
    let c = n / (n - 1.0);
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| c * ((x - ma).powi(2) - (y - mb).powi(2))).collect();
    let (gap, se) = linalg::mean_se(&d);
    (linalg::variance(a), linalg::variance(b), gap, se)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbe {
    pub var_sup: f64,
    pub var_n2n: f64,
    /// Measured `Var[L_N2N] - Var[L_SUP]` and its standard error.
    pub delta: f64,
    pub delta_se: f64,
    pub mse: f64,
    /// `3 sigma^4 / n + 4 sigma^2 MSE / n`.
    pub delta_stated: f64,
    /// `2 sigma^4 / n + 4 sigma^2 MSE / n`, the Gaussian fourth-moment value.
    pub delta_gaussian: f64,
}

/// Monte Carlo variances of the supervised and Noise2Noise losses of a fixed denoiser.
pub fn variance_probe(est: &Estimator, prior: &Prior, noise: &NoiseModel, samples: usize, rng: &RngStream) -> Result<VarianceProbe> {
    let sigma = iso_sigma(noise)?;
    if samples < 2 {
        return Err(Error::param("samples", "need at least two"));
    }
    let n = prior.n();
    let op = LinearOperator::identity(n);
    let pairs: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64);
            let x = prior.sample(&mut r);
            let y = noise.corrupt(&x, &mut r)?;
            let y2 = noise.corrupt(&x, &mut r)?;
            let f = est.forward(&y, &op)?;
            Ok(((&f - &x).norm_squared() / n as f64, (&f - &y2).norm_squared() / n as f64))
        })
        .collect::<Result<_>>()?;
    let sup: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n2n: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (var_n2n, var_sup, delta, delta_se) = variance_gap(&n2n, &sup);
    let mse = linalg::mean_se(&sup).0;
    let s2 = sigma * sigma;
    let nf = n as f64;
    Ok(VarianceProbe {
        var_sup,
        var_n2n,
        delta,
        delta_se,
        mse,
        delta_stated: 3.0 * s2 * s2 / nf + 4.0 * s2 * mse / nf,
        delta_gaussian: 2.0 * s2 * s2 / nf + 4.0 * s2 * mse / nf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientVarianceProbe {
    pub var_sup_grad: f64,
    pub var_n2n_grad: f64,
    pub gap: f64,
    pub gap_se: f64,
    /// `sigma^2 E||(1/n) df/dtheta||_F^2`.
    pub additional_term: f64,
}

/// Total variance of the per-sample gradients `(1/n) J_theta^T (f - t)` with
/// target `t = x` (supervised) or `t = y2` (Noise2Noise).
pub fn gradient_variance_probe(
    est: &Estimator,
    prior: &Prior,
    noise: &NoiseModel,
    samples: usize,
    rng: &RngStream,
) -> Result<GradientVarianceProbe> {
    let sigma = iso_sigma(noise)?;
    if samples < 2 {
        return Err(Error::param("samples", "need at least two"));
    }
    let n = prior.n();
    let nf = n as f64;
    let op = LinearOperator::identity(n);
    let draws: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64);
            let x = prior.sample(&mut r);
            let y = noise.corrupt(&x, &mut r)?;
            let y2 = noise.corrupt(&x, &mut r)?;
            let f = est.forward(&y, &op)?;
            let gs = est.vjp_params(&y, &op, &((&f - &x) / nf))?;
            let gn = est.vjp_params(&y, &op, &((&f - &y2) / nf))?;
            let mut fro = 0.0;
            for k in 0..n {
                let mut e = RealVector::zeros(n);
                e[k] = 1.0 / nf;
                fro += est.vjp_params(&y, &op, &e)?.iter().map(|v| v * v).sum::<f64>();
            }
            Ok((gs, gn, fro))
        })
        .collect::<Result<_>>()?;
    let p = est.num_params();
    let mean = |sel: &dyn Fn(&(Vec<f64>, Vec<f64>, f64)) -> &Vec<f64>| {
        let mut m = vec![0.0; p];
        for d in &draws {
            for (a, b) in m.iter_mut().zip(sel(d)) {
                *a += b / samples as f64;
            }
        }
        m
    };
    let ms = mean(&|d| &d.0);
    let mn = mean(&|d| &d.1);
    let dev = |g: &[f64], m: &[f64]| g.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let c = samples as f64 / (samples as f64 - 1.0);
    let sup: Vec<f64> = draws.iter().map(|d| c * dev(&d.0, &ms)).collect();
    let n2n: Vec<f64> = draws.iter().map(|d| c * dev(&d.1, &mn)).collect();
    let diff: Vec<f64> = n2n.iter().zip(&sup).map(|(a, b)| a - b).collect();
    let (gap, gap_se) = linalg::mean_se(&diff);
    let fro = draws.iter().map(|d| d.2).sum::<f64>() / samples as f64;
    Ok(GradientVarianceProbe {
        var_sup_grad: linalg::mean_se(&sup).0,
        var_n2n_grad: linalg::mean_se(&n2n).0,
        gap,
        gap_se,
        additional_term: sigma * sigma * fro,
    })
}

/// Sweep of the optimality gap `test MSE - MMSE` against the training-set size.
#[derive(Clone, Debug)]
pub struct GapConfig {
    pub ns: Vec<usize>,
    pub repeats: usize,
    pub loss: Loss,
    pub testbed: Testbed,
    pub estimator: EstimatorSpec,
    pub train: TrainConfig,
    pub mmse: f64,
    /// Test items when the error cannot be computed in closed form.
    pub test_items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub ns: Vec<usize>,
    pub mean_gap: Vec<f64>,
    pub se_gap: Vec<f64>,
    pub slope: f64,
    /// Half-width of the 95% interval of the slope.
    pub slope_ci: f64,
    pub dropped: usize,
}

pub const DEFAULT_REPEATS: usize = 15;

fn test_mse(est: &Estimator, tb: &Testbed, test: &Option<crate::losses::Batch>) -> Result<f64> {
    if let (Estimator::Affine(a), NoiseModel::GaussianIso { .. } | NoiseModel::GaussianAniso { .. }) = (est, &tb.noise) {
        let ident = match &tb.ops {
            crate::operators::OperatorDistribution::Finite { ops, .. } => {
                ops.len() == 1 && matches!(ops[0].kind(), crate::operators::OpKind::Identity)
            }
            _ => false,
        };
        if ident && !tb.positive {
            let n = tb.n();
            return Ok(affine_denoising_mse(a, &tb.prior.mean(), &tb.prior.covariance(), &tb.noise.covariance(n)?));
        }
    }
    oracle_mse(est, test.as_ref().expect("test set drawn")).map(|v| v.0)
}

pub fn gap_experiment(cfg: &GapConfig, seed: u64) -> Result<GapResult> {
    if cfg.ns.len() < 2 || cfg.repeats == 0 {
        return Err(Error::param("ns", "need at least two sizes and one repeat"));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.ns.len()).flat_map(|i| (0..cfg.repeats).map(move |r| (i, r))).collect();
    let root = RngStream::new(seed, 7);
    let gaps: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let rr = root.derive(i as u64).derive(r as u64);
            let all = cfg.testbed.batch(cfg.ns[i], &rr.derive(0))?;
            let test = if matches!(cfg.estimator, EstimatorSpec::Affine { .. }) && !cfg.testbed.positive {
                None
            } else {
                Some(cfg.testbed.batch(cfg.test_items, &rr.derive(1))?)
            };
            let data = TrainData::holdout(all, cfg.train.val_fraction, test.clone())?;
            let est = cfg.estimator.build(cfg.testbed.n(), &mut rr.derive(2))?;
            let mut tc = cfg.train.clone();
            tc.seed = seed ^ ((i as u64) << 32) ^ r as u64;
            let out = train(&cfg.loss, est, &data, &tc)?;
            let test = match test {
                Some(t) => Some(t),
                None if !matches!(out.est, Estimator::Affine(_)) => Some(cfg.testbed.batch(cfg.test_items, &rr.derive(1))?),
                None => None,
            };
            Ok((i, test_mse(&out.est, &cfg.testbed, &test)? - cfg.mmse))
        })
        .collect::<Result<_>>()?;
    let mut mean_gap = Vec::new();
    let mut se_gap = Vec::new();
    for i in 0..cfg.ns.len() {
        let v: Vec<f64> = gaps.iter().filter(|g| g.0 == i).map(|g| g.1).collect();
        let (m, s) = linalg::mean_se(&v);
        mean_gap.push(m);
        se_gap.push(s);
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut dropped = 0;
    for (n, g) in cfg.ns.iter().zip(&mean_gap) {
        if *g > 0.0 {
            lx.push((*n as f64).ln());
            ly.push(g.ln());
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} non-positive gaps from the fit");
    }
    if lx.len() < 2 {
        return Err(Error::Domain("fewer than two positive gaps to fit".into()));
    }
    let (slope, icpt) = linalg::linear_fit(&lx, &ly);
    let slope_ci = if lx.len() > 2 {
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
        1.96 * (rss / (lx.len() - 2) as f64 / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(GapResult { ns: cfg.ns.clone(), mean_gap, se_gap, slope, slope_ci, dropped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noisier2NoiseCheck {
    /// Largest entrywise gap between the corrected Noisier2Noise and R2R maps.
    pub gap_r2r: f64,
    /// Largest entrywise gap between the corrected map and `E[x | y1]`.
    pub gap_oracle: f64,
    pub corrected: Affine,
    pub r2r: Affine,
}

fn max_gap(a: &Affine, w: &RealMatrix, b: &RealVector) -> f64 {
    (&a.w - w).amax().max((&a.b - b).amax())
}

/// Train affine maps with Noisier2Noise (`y1 = y + tau w`) and with R2R at
/// `alpha = tau^2 / (1 + tau^2)`, and compare both with the conjugate oracle.
pub fn noisier2noise_equivalence(prior: &Prior, sigma: f64, tau: f64, items: usize, seed: u64) -> Result<Noisier2NoiseCheck> {
    let n = prior.n();
    let noise = NoiseModel::GaussianIso { sigma };
    let tb = Testbed::denoising(prior.clone(), noise.clone())?;
    let all = tb.batch(items, &RngStream::new(seed, 11))?;
    let data = TrainData { train: all, val: Default::default(), test: None };
    let cfg = TrainConfig::exact(seed);
    let n2n = train(
        &Loss::Noisier2Noise { noise: noise.clone(), tau },
        Estimator::affine_zeros(n, Default::default())?,
        &data,
        &cfg,
    )?;
    let alpha = tau * tau / (1.0 + tau * tau);
    let r2r = train(
        &Loss::R2r { noise: noise.clone(), alpha, resamples: 1, metric: Metric::L2 },
        Estimator::affine_zeros(n, Default::default())?,
        &data,
        &TrainConfig::exact(seed.wrapping_add(1)),
    )?;
    let (Estimator::Affine(a_n2n), Estimator::Affine(a_r2r)) = (n2n.est, r2r.est) else {
        unreachable!("affine estimators stay affine")
    };
    let corrected = noisier2noise_affine(&a_n2n, tau)?;
    let s1 = sigma * sigma * (1.0 + tau * tau);
    let (w, b) = linear_mmse(&prior.mean(), &prior.covariance(), &RealMatrix::identity(n, n), &(RealMatrix::identity(n, n) * s1));
    Ok(Noisier2NoiseCheck {
        gap_r2r: max_gap(&corrected, &a_r2r.w, &a_r2r.b),
        gap_oracle: max_gap(&corrected, &w, &b),
        corrected,
        r2r: a_r2r,
    })
}

/// Exact-affine gap sweep on the 8-dimensional two-component GMM at `sigma = 0.5`,
/// for `"sure"`, `"n2n"` or `"supervised"`. The MMSE comes from the score formula.
pub fn gmm_gap_config(loss: &str, ns: Vec<usize>, repeats: usize, mmse_samples: usize) -> Result<GapConfig> {
    let noise = NoiseModel::GaussianIso { sigma: 0.5 };
    let prior = two_component(8, 1.0, 0.5)?;
    let tb = Testbed::denoising(prior.clone(), noise.clone())?;
    let (loss, testbed) = match loss {
        "sure" => (Loss::Sure { noise: noise.clone(), backend: TraceBackend::Analytic }, tb),
        "n2n" => (Loss::Noise2Noise, tb.with_pairs()),
        "supervised" => (Loss::Supervised, tb),
        other => return Err(Error::param("loss", format!("no gap sweep for '{other}'"))),
    };
    let op = LinearOperator::identity(8);
    let (mmse, _) = mmse(&prior, &noise, &op, MmseMethod::ScoreFormula, mmse_samples, &mut RngStream::new(0, 77))?;
    Ok(GapConfig {
        ns,
        repeats,
        loss,
        testbed,
        estimator: EstimatorSpec::Affine { constraint: Default::default() },
        train: TrainConfig { val_fraction: 0.0, ..TrainConfig::exact(0) },
        mmse,
        test_items: 0,
    })
}
