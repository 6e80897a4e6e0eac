//! Signal priors with closed-form or enumerable Bayesian oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RealMatrix, RealVector};
use crate::noise::NoiseModel;
use crate::operators::LinearOperator;
use crate::rng::RngStream;

/// Gaussian mixture `sum_k w_k N(mu_k, C_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior {
    pub weights: Vec<f64>,
    pub means: Vec<RealVector>,
    pub covs: Vec<RealMatrix>,
    factors: Vec<RealMatrix>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<RealVector>, covs: Vec<RealMatrix>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::shape("need one mean and covariance per weight"));
        }
        let n = means[0].len();
        if means.iter().any(|m| m.len() != n) || covs.iter().any(|c| c.shape() != (n, n)) {
            return Err(Error::shape("component dimensions differ"));
        }
        let s: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(s > 0.0) {
            return Err(Error::param("weights", "must be non-negative with positive sum"));
        }
        for c in &covs {
            if linalg::min_eigenvalue(c) < -1e-12 {
                return Err(Error::param("covs", "covariances must be positive semi-definite"));
            }
        }
        let factors = covs.iter().map(linalg::sqrt_factor).collect();
        Ok(GmmPrior { weights: weights.iter().map(|w| w / s).collect(), means, covs, factors })
    }

    /// Components with covariances `v_k I`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<RealVector>, variances: &[f64]) -> Result<Self> {
        let n = means.first().map(|m| m.len()).unwrap_or(0);
        let covs = variances.iter().map(|v| RealMatrix::identity(n, n) * *v).collect();
        Self::new(weights, means, covs)
    }

    pub fn n(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> RealVector {
        let k = pick(&self.weights, rng);
        let z = RealVector::from_vec(rng.normal_vec(self.n()));
        &self.means[k] + &self.factors[k] * z
    }

    pub fn mean(&self) -> RealVector {
        let mut m = RealVector::zeros(self.n());
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m += mu * *w;
        }
        m
    }

    pub fn covariance(&self) -> RealMatrix {
        let mean = self.mean();
        let n = self.n();
        let mut c = RealMatrix::zeros(n, n);
        for k in 0..self.weights.len() {
            let d = &self.means[k] - &mean;
            c += (&self.covs[k] + &d * d.transpose()) * self.weights[k];
        }
        c
    }
}

/// Discrete prior on a finite set of atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomPrior {
    pub atoms: Vec<RealVector>,
    pub weights: Vec<f64>,
}

impl AtomPrior {
    pub fn new(atoms: Vec<RealVector>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::shape("need one weight per atom"));
        }
        let n = atoms[0].len();
        if atoms.iter().any(|a| a.len() != n) {
            return Err(Error::shape("atoms have different dimensions"));
        }
        let s: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(s > 0.0) {
            return Err(Error::param("weights", "must be non-negative with positive sum"));
        }
        Ok(AtomPrior { atoms, weights: weights.iter().map(|w| w / s).collect() })
    }

    pub fn uniform(atoms: Vec<RealVector>) -> Result<Self> {
        let k = atoms.len();
        Self::new(atoms, vec![1.0; k])
    }

    pub fn n(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> RealVector {
        self.atoms[pick(&self.weights, rng)].clone()
    }

    pub fn mean(&self) -> RealVector {
        let mut m = RealVector::zeros(self.n());
        for (w, a) in self.weights.iter().zip(&self.atoms) {
            m += a * *w;
        }
        m
    }

    pub fn covariance(&self) -> RealMatrix {
        let mean = self.mean();
        let n = self.n();
        let mut c = RealMatrix::zeros(n, n);
        for (w, a) in self.weights.iter().zip(&self.atoms) {
            let d = a - &mean;
            c += &d * d.transpose() * *w;
        }
        c
    }

    /// Posterior weights of the atoms given `y = A x + noise` (noise on the support rows only).
    pub fn posterior_weights(&self, noise: &NoiseModel, op: &LinearOperator, y: &RealVector) -> Result<Vec<f64>> {
        let support = op.row_support();
        let rows: Vec<usize> = (0..support.len()).filter(|&i| support[i]).collect();
        let ys = RealVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        let noise = restrict_noise(noise, &rows)?;
        let mut logw = Vec::with_capacity(self.atoms.len());
        for (w, a) in self.weights.iter().zip(&self.atoms) {
            let ax = op.apply(a)?;
            let axs = RealVector::from_iterator(rows.len(), rows.iter().map(|&i| ax[i]));
            let ll = noise.log_likelihood(&axs, &ys)?;
            logw.push(if *w > 0.0 { w.ln() + ll } else { f64::NEG_INFINITY });
        }
        let z = linalg::log_sum_exp(&logw);
        if !z.is_finite() {
            return Err(Error::Domain("measurement has zero likelihood under every atom".into()));
        }
        Ok(logw.iter().map(|l| (l - z).exp()).collect())
    }

    pub fn posterior_mean(&self, noise: &NoiseModel, op: &LinearOperator, y: &RealVector) -> Result<RealVector> {
        let w = self.posterior_weights(noise, op, y)?;
        let mut m = RealVector::zeros(self.n());
        for (wk, a) in w.iter().zip(&self.atoms) {
            m += a * *wk;
        }
        Ok(m)
    }
}

fn restrict_noise(noise: &NoiseModel, rows: &[usize]) -> Result<NoiseModel> {
    Ok(match noise {
        NoiseModel::GaussianAniso { sigma } => {
            NoiseModel::GaussianAniso { sigma: rows.iter().map(|&i| sigma[i]).collect() }
        }
        NoiseModel::GaussianCorrelated { .. } => {
            return Err(Error::Capability("correlated noise on a subset of rows".into()))
        }
        other => other.clone(),
    })
}

fn pick(weights: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    Gmm(GmmPrior),
    Atoms(AtomPrior),
}

impl Prior {
    pub fn n(&self) -> usize {
        match self {
            Prior::Gmm(g) => g.n(),
            Prior::Atoms(a) => a.n(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> RealVector {
        match self {
            Prior::Gmm(g) => g.sample(rng),
            Prior::Atoms(a) => a.sample(rng),
        }
    }

    /// Rejection sampling restricted to strictly positive signals.
    pub fn sample_positive(&self, rng: &mut RngStream) -> Result<RealVector> {
        for _ in 0..10_000 {
            let x = self.sample(rng);
            if x.iter().all(|v| *v > 0.0) {
                return Ok(x);
            }
        }
        Err(Error::Domain("prior puts almost no mass on positive signals".into()))
    }

    pub fn mean(&self) -> RealVector {
        match self {
            Prior::Gmm(g) => g.mean(),
            Prior::Atoms(a) => a.mean(),
        }
    }

    pub fn covariance(&self) -> RealMatrix {
        match self {
            Prior::Gmm(g) => g.covariance(),
            Prior::Atoms(a) => a.covariance(),
        }
    }

    /// `E[x | y]` for `y = A x + noise`.
    pub fn posterior_mean(&self, noise: &NoiseModel, op: &LinearOperator, y: &RealVector) -> Result<RealVector> {
        match self {
            Prior::Atoms(a) => a.posterior_mean(noise, op, y),
            Prior::Gmm(g) => GmmPosterior::new(g, noise, op)?.posterior_mean(y),
        }
    }
}

/// Precomputed Gaussian algebra for a GMM observed through `y = A x + noise`.
#[derive(Clone, Debug)]
pub struct GmmPosterior {
    rows: Vec<usize>,
    m: usize,
    log_w: Vec<f64>,
    means_y: Vec<RealVector>,
    prec_y: Vec<RealMatrix>,
    log_det_y: Vec<f64>,
    means_x: Vec<RealVector>,
    gains: Vec<RealMatrix>,
}

impl GmmPosterior {
    pub fn new(prior: &GmmPrior, noise: &NoiseModel, op: &LinearOperator) -> Result<Self> {
        if !noise.is_gaussian() {
            return Err(Error::Capability("GMM posteriors need Gaussian noise".into()));
        }
        if op.n() != prior.n() {
            return Err(Error::shape("operator and prior dimensions differ"));
        }
        let support = op.row_support();
        let rows: Vec<usize> = (0..support.len()).filter(|&i| support[i]).collect();
        let a_full = op.matrix()?;
        let a = a_full.select_rows(rows.iter());
        let sigma = noise.covariance(op.m())?.select_rows(rows.iter()).select_columns(rows.iter());
        let mut out = GmmPosterior {
            rows,
            m: op.m(),
            log_w: prior.weights.iter().map(|w| w.ln()).collect(),
            means_y: vec![],
            prec_y: vec![],
            log_det_y: vec![],
            means_x: prior.means.clone(),
            gains: vec![],
        };
        for k in 0..prior.weights.len() {
            let s = &a * &prior.covs[k] * a.transpose() + &sigma;
            let e = linalg::sym_eigen(&s);
            if e.eigenvalues.iter().any(|l| *l <= 0.0) {
                return Err(Error::Domain("marginal covariance of y is singular".into()));
            }
            let p = linalg::sym_power(&s, -1.0, 0.0);
            out.log_det_y.push(e.eigenvalues.iter().map(|l| l.ln()).sum());
            out.gains.push(&prior.covs[k] * a.transpose() * &p);
            out.means_y.push(&a * &prior.means[k]);
            out.prec_y.push(p);
        }
        Ok(out)
    }

    fn restrict(&self, y: &RealVector) -> Result<RealVector> {
        linalg::check_len(y, self.m, "measurement")?;
        Ok(RealVector::from_iterator(self.rows.len(), self.rows.iter().map(|&i| y[i])))
    }

    fn responsibilities(&self, ys: &RealVector) -> Vec<f64> {
        let l: Vec<f64> = (0..self.log_w.len())
            .map(|k| {
                let d = ys - &self.means_y[k];
                self.log_w[k] - 0.5 * self.log_det_y[k] - 0.5 * d.dot(&(&self.prec_y[k] * &d))
            })
            .collect();
        let z = linalg::log_sum_exp(&l);
        l.iter().map(|v| (v - z).exp()).collect()
    }

    /// `log p(y)` up to the `(2 pi)^{-m/2}` constant.
    pub fn log_density(&self, y: &RealVector) -> Result<f64> {
        let ys = self.restrict(y)?;
        let l: Vec<f64> = (0..self.log_w.len())
            .map(|k| {
                let d = &ys - &self.means_y[k];
                self.log_w[k] - 0.5 * self.log_det_y[k] - 0.5 * d.dot(&(&self.prec_y[k] * &d))
            })
            .collect();
        Ok(linalg::log_sum_exp(&l))
    }

    /// `grad log p(y)` on the support rows, zero elsewhere.
    pub fn score(&self, y: &RealVector) -> Result<RealVector> {
        let ys = self.restrict(y)?;
        let r = self.responsibilities(&ys);
        let mut s = RealVector::zeros(ys.len());
        for k in 0..r.len() {
            s -= (&self.prec_y[k] * (&ys - &self.means_y[k])) * r[k];
        }
        let mut out = RealVector::zeros(self.m);
        for (j, &i) in self.rows.iter().enumerate() {
            out[i] = s[j];
        }
        Ok(out)
    }

    pub fn posterior_mean(&self, y: &RealVector) -> Result<RealVector> {
        let ys = self.restrict(y)?;
        let r = self.responsibilities(&ys);
        let mut m = RealVector::zeros(self.means_x[0].len());
        for k in 0..r.len() {
            m += (&self.means_x[k] + &self.gains[k] * (&ys - &self.means_y[k])) * r[k];
        }
        Ok(m)
    }
}

/// `y + Sigma * score(y)`.
pub fn tweedie_estimate(y: &RealVector, sigma: &RealMatrix, score: &RealVector) -> RealVector {
    y + sigma * score
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmseMethod {
    /// `tr(Sigma)/n - E||Sigma score(y)||^2 / n` (GMM prior, Gaussian denoising).
    ScoreFormula,
    /// `E||E[x|y] - x||^2 / n` by sampling `(x, y)`.
    MonteCarlo,
    /// Closed form for a single Gaussian component.
    Exact,
}

/// Per-entry MMSE with the standard error of its Monte Carlo estimate (0 when exact).
pub fn mmse(
    prior: &Prior,
    noise: &NoiseModel,
    op: &LinearOperator,
    method: MmseMethod,
    samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let n = prior.n() as f64;
    match method {
        MmseMethod::Exact => {
            let g = match prior {
                Prior::Gmm(g) if g.weights.len() == 1 => g,
                _ => return Err(Error::Capability("exact MMSE needs a single Gaussian".into())),
            };
            let post = GmmPosterior::new(g, noise, op)?;
            let a = op.matrix()?.select_rows(post.rows.iter());
            let c = &g.covs[0];
            let err = c - &post.gains[0] * &a * c;
            Ok((err.trace() / n, 0.0))
        }
        MmseMethod::ScoreFormula => {
            let g = match prior {
                Prior::Gmm(g) => g,
                _ => return Err(Error::Capability("the score formula needs a GMM prior".into())),
            };
            if !matches!(op.kind(), crate::operators::OpKind::Identity) {
                return Err(Error::Capability("the score formula is for denoising".into()));
            }
            let sigma = noise.covariance(op.m())?;
            let post = GmmPosterior::new(g, noise, op)?;
            let mut v = Vec::with_capacity(samples);
            for _ in 0..samples {
                let x = g.sample(rng);
                let y = noise.corrupt(&x, rng)?;
                let s = post.score(&y)?;
                v.push((sigma.trace() - (&sigma * s).norm_squared()) / n);
            }
            Ok(linalg::mean_se(&v))
        }
        MmseMethod::MonteCarlo => {
            let post = match prior {
                Prior::Gmm(g) => Some(GmmPosterior::new(g, noise, op)?),
                _ => None,
            };
            let support = op.row_support();
            let mut v = Vec::with_capacity(samples);
            for _ in 0..samples {
                let x = prior.sample(rng);
                let y = noise.corrupt_on(&op.apply(&x)?, &support, rng)?;
                let m = match &post {
                    Some(p) => p.posterior_mean(&y)?,
                    None => prior.posterior_mean(noise, op, &y)?,
                };
                v.push((m - x).norm_squared() / n);
            }
            Ok(linalg::mean_se(&v))
        }
    }
}

/// `E||score(y)||^2` by sampling, with its standard error.
pub fn score_second_moment(
    prior: &GmmPrior,
    noise: &NoiseModel,
    samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let op = LinearOperator::identity(prior.n());
    let post = GmmPosterior::new(prior, noise, &op)?;
    let mut v = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = prior.sample(rng);
        let y = noise.corrupt(&x, rng)?;
        v.push(post.score(&y)?.norm_squared());
    }
    Ok(linalg::mean_se(&v))
}

/// Zero-expected-divergence denoiser `y + n score / E||score||^2`.
pub fn zed_estimate(y: &RealVector, score: &RealVector, score_m2: f64) -> RealVector {
    y + score * (y.len() as f64 / score_m2)
}

/// Error of the zero-divergence denoiser: `mmse / (1 - mmse / sigma2)`.
pub fn zed_gap(mmse: f64, sigma2: f64) -> Result<f64> {
    if !(mmse < sigma2) || !(mmse >= 0.0) {
        return Err(Error::Domain("need 0 <= mmse < sigma^2".into()));
    }
    Ok(mmse / (1.0 - mmse / sigma2))
}

/// Best affine estimator `x ~ W y + b` from first and second moments.
pub fn linear_mmse(
    mean_x: &RealVector,
    cov_x: &RealMatrix,
    op: &RealMatrix,
    noise_cov: &RealMatrix,
) -> (RealMatrix, RealVector) {
    let cy = op * cov_x * op.transpose() + noise_cov;
    let w = cov_x * op.transpose() * linalg::pinv(&cy, 1e-12);
    let b = mean_x - &w * (op * mean_x);
    (w, b)
}
