//! Observation noise models, noisy-pair resampling and likelihoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RealMatrix, RealVector};
use crate::rng::{Dist, RngStream};

/// Default split parameter for recorruption.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Noise acting entry-wise (or through a circular filter) on clean measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    GaussianIso { sigma: f64 },
    /// Independent entries with their own standard deviations.
    GaussianAniso { sigma: Vec<f64> },
    /// White noise passed through a circular filter: covariance `C C^T`.
    GaussianCorrelated { filter: Vec<f64> },
    /// `y = gamma * z`, `z ~ Poisson(x / gamma)`.
    Poisson { gamma: f64 },
    /// `y ~ Gamma(shape = l, rate = l / x)`: mean `x`, variance `x^2 / l`.
    Gamma { l: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::GaussianIso { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => {
                Err(Error::param("sigma", "must be finite and non-negative"))
            }
            NoiseModel::GaussianAniso { sigma } if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) => {
                Err(Error::param("sigma", "entries must be finite and non-negative"))
            }
            NoiseModel::GaussianCorrelated { filter } if filter.is_empty() || filter.iter().any(|f| !f.is_finite()) => {
                Err(Error::param("filter", "must be non-empty and finite"))
            }
            NoiseModel::Poisson { gamma } if !(*gamma > 0.0) || !gamma.is_finite() => {
                Err(Error::param("gamma", "must be positive"))
            }
            NoiseModel::Gamma { l } if !(*l > 0.0) || !l.is_finite() => Err(Error::param("l", "must be positive")),
            _ => Ok(()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(
            self,
            NoiseModel::GaussianIso { .. } | NoiseModel::GaussianAniso { .. } | NoiseModel::GaussianCorrelated { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::GaussianIso { .. } => "gaussian_iso",
            NoiseModel::GaussianAniso { .. } => "gaussian_aniso",
            NoiseModel::GaussianCorrelated { .. } => "gaussian_correlated",
            NoiseModel::Poisson { .. } => "poisson",
            NoiseModel::Gamma { .. } => "gamma",
        }
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        match self {
            NoiseModel::GaussianAniso { sigma } if sigma.len() != m => {
                Err(Error::shape(format!("noise has {} entries, signal has {m}", sigma.len())))
            }
            NoiseModel::GaussianCorrelated { filter } if filter.len() > m => {
                Err(Error::shape("correlation filter longer than the signal"))
            }
            _ => Ok(()),
        }
    }

    /// Covariance of Gaussian noise in dimension `m`.
    pub fn covariance(&self, m: usize) -> Result<RealMatrix> {
        self.check_dim(m)?;
        match self {
            NoiseModel::GaussianIso { sigma } => Ok(RealMatrix::identity(m, m) * (sigma * sigma)),
            NoiseModel::GaussianAniso { sigma } => {
                Ok(RealMatrix::from_diagonal(&RealVector::from_iterator(m, sigma.iter().map(|s| s * s))))
            }
            NoiseModel::GaussianCorrelated { filter } => {
                let c = circulant(filter, m);
                Ok(&c * c.transpose())
            }
            _ => Err(Error::Capability(format!("{} noise has no fixed covariance", self.name()))),
        }
    }

    /// A draw of `N(0, Sigma)` for Gaussian models.
    pub fn gaussian_noise(&self, m: usize, rng: &mut RngStream) -> Result<RealVector> {
        self.check_dim(m)?;
        match self {
            NoiseModel::GaussianIso { sigma } => Ok(RealVector::from_vec(rng.normal_vec(m)) * *sigma),
            NoiseModel::GaussianAniso { sigma } => {
                Ok(RealVector::from_iterator(m, sigma.iter().map(|s| s * rng.normal())))
            }
            NoiseModel::GaussianCorrelated { filter } => {
                let z = rng.normal_vec(m);
                Ok(RealVector::from_iterator(
                    m,
                    (0..m).map(|i| filter.iter().enumerate().map(|(j, f)| f * z[(i + m - j) % m]).sum()),
                ))
            }
            _ => Err(Error::Capability(format!("{} noise is not Gaussian", self.name()))),
        }
    }

    /// Noisy measurement of the clean signal `x`.
    pub fn corrupt(&self, x: &RealVector, rng: &mut RngStream) -> Result<RealVector> {
        self.validate()?;
        let m = x.len();
        match self {
            NoiseModel::Poisson { gamma } => {
                let mut y = RealVector::zeros(m);
                for i in 0..m {
                    if !(x[i] >= 0.0) {
                        return Err(Error::Domain("Poisson noise needs a non-negative signal".into()));
                    }
                    y[i] = gamma * rng.sample(&Dist::Poisson { rate: x[i] / gamma })?;
                }
                Ok(y)
            }
            NoiseModel::Gamma { l } => {
                let mut y = RealVector::zeros(m);
                for i in 0..m {
                    if !(x[i] > 0.0) {
                        return Err(Error::Domain("gamma noise needs a strictly positive signal".into()));
                    }
                    y[i] = rng.sample(&Dist::Gamma { shape: *l, rate: l / x[i] })?;
                }
                Ok(y)
            }
            _ => Ok(x + self.gaussian_noise(m, rng)?),
        }
    }

    /// Corrupt only the rows flagged in `support`; the other rows stay zero.
    pub fn corrupt_on(&self, x: &RealVector, support: &[bool], rng: &mut RngStream) -> Result<RealVector> {
        if support.iter().all(|s| *s) {
            return self.corrupt(x, rng);
        }
        let y = match self {
            NoiseModel::Poisson { .. } | NoiseModel::Gamma { .. } => {
                let idx: Vec<usize> = (0..x.len()).filter(|&i| support[i]).collect();
                let sub = RealVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i]));
                let ys = self.corrupt(&sub, rng)?;
                let mut y = RealVector::zeros(x.len());
                for (k, &i) in idx.iter().enumerate() {
                    y[i] = ys[k];
                }
                y
            }
            _ => self.corrupt(x, rng)?,
        };
        Ok(zero_outside(&y, support))
    }

    /// Split `y` into two conditionally independent noisy copies `(y1, y2)` with
    /// `E[y1|x] = E[y2|x] = x`, `Var(y1) = Var(y) / (1 - alpha)` and `Var(y2) = Var(y) / alpha`.
    pub fn gr2r_pair(&self, y: &RealVector, alpha: f64, rng: &mut RngStream) -> Result<(RealVector, RealVector)> {
        self.validate()?;
        check_alpha(alpha)?;
        let m = y.len();
        match self {
            NoiseModel::Poisson { gamma } => {
                let mut y1 = RealVector::zeros(m);
                let mut y2 = RealVector::zeros(m);
                for i in 0..m {
                    let z = y[i] / gamma;
                    let zr = z.round();
                    if zr < 0.0 || (z - zr).abs() > 1e-6 * zr.max(1.0) {
                        return Err(Error::Domain("Poisson measurements must be non-negative multiples of gamma".into()));
                    }
                    let w = rng.sample(&Dist::Binomial { trials: zr as u64, p: alpha })?;
                    y1[i] = (y[i] - gamma * w) / (1.0 - alpha);
                    y2[i] = gamma * w / alpha;
                }
                Ok((y1, y2))
            }
            NoiseModel::Gamma { l } => {
                let mut y1 = RealVector::zeros(m);
                let mut y2 = RealVector::zeros(m);
                for i in 0..m {
                    if !(y[i] > 0.0) {
                        return Err(Error::Domain("gamma measurements must be positive".into()));
                    }
                    let w = rng.sample(&Dist::Beta { a: l * alpha, b: l * (1.0 - alpha) })?;
                    y1[i] = y[i] * (1.0 - w) / (1.0 - alpha);
                    y2[i] = y[i] * w / alpha;
                }
                Ok((y1, y2))
            }
            _ => {
                let w = self.gaussian_noise(m, rng)?;
                let a = (alpha / (1.0 - alpha)).sqrt();
                Ok((y + &w * a, y - &w / a))
            }
        }
    }

    /// Conditional variance of each entry of `y` given the clean signal.
    pub fn conditional_variance(&self, x: &RealVector) -> Result<RealVector> {
        let m = x.len();
        Ok(match self {
            NoiseModel::Poisson { gamma } => x * *gamma,
            NoiseModel::Gamma { l } => x.map(|v| v * v / l),
            _ => self.covariance(m)?.diagonal(),
        })
    }

    /// Per-entry negative log-likelihood of `y` under mean `xhat`, up to constants, divided by `n`.
    pub fn nll(&self, xhat: &RealVector, y: &RealVector) -> Result<f64> {
        linalg::check_len(y, xhat.len(), "nll target")?;
        let n = y.len() as f64;
        match self {
            NoiseModel::Poisson { .. } => {
                let mut s = 0.0;
                for (f, v) in xhat.iter().zip(y.iter()) {
                    if *v != 0.0 && !(*f > 0.0) {
                        return Err(Error::Domain("Poisson likelihood needs a positive mean".into()));
                    }
                    s += f - if *v != 0.0 { v * f.ln() } else { 0.0 };
                }
                Ok(s / n)
            }
            NoiseModel::Gamma { .. } => {
                let mut s = 0.0;
                for (f, v) in xhat.iter().zip(y.iter()) {
                    if !(*f > 0.0) {
                        return Err(Error::Domain("gamma likelihood needs a positive mean".into()));
                    }
                    s += f.ln() + v / f;
                }
                Ok(s / n)
            }
            _ => {
                let r = xhat - y;
                Ok(self.precision_quadratic(&r)? / n)
            }
        }
    }

    /// `r^T Sigma^{-1} r` for Gaussian models.
    pub fn precision_quadratic(&self, r: &RealVector) -> Result<f64> {
        let m = r.len();
        match self {
            NoiseModel::GaussianIso { sigma } => Ok(r.norm_squared() / (sigma * sigma)),
            NoiseModel::GaussianAniso { sigma } => {
                self.check_dim(m)?;
                Ok(r.iter().zip(sigma).map(|(v, s)| v * v / (s * s)).sum())
            }
            _ => {
                let p = linalg::pinv(&self.covariance(m)?, 1e-12);
                Ok(r.dot(&(p * r)))
            }
        }
    }

    /// `log p(y | x)` up to terms that do not depend on `x`.
    pub fn log_likelihood(&self, x: &RealVector, y: &RealVector) -> Result<f64> {
        linalg::check_len(y, x.len(), "likelihood")?;
        match self {
            NoiseModel::GaussianIso { sigma } if *sigma == 0.0 => {
                Ok(if (x - y).amax() <= 1e-9 { 0.0 } else { f64::NEG_INFINITY })
            }
            NoiseModel::Poisson { gamma } => {
                let mut s = 0.0;
                for (xv, yv) in x.iter().zip(y.iter()) {
                    let lam = xv / gamma;
                    let z = yv / gamma;
                    if lam <= 0.0 {
                        if z > 0.0 {
                            return Ok(f64::NEG_INFINITY);
                        }
                    } else {
                        s += z * lam.ln() - lam;
                    }
                }
                Ok(s)
            }
            NoiseModel::Gamma { l } => {
                let mut s = 0.0;
                for (xv, yv) in x.iter().zip(y.iter()) {
                    if !(*xv > 0.0) {
                        return Ok(f64::NEG_INFINITY);
                    }
                    s += -l * xv.ln() - l * yv / xv;
                }
                Ok(s)
            }
            _ => Ok(-0.5 * self.precision_quadratic(&(y - x))?),
        }
    }

    /// Gradient of the log base measure `h` in the exponential-family form
    /// `p(y|x) = h(y) exp(y^T eta(x) - phi(x))`.
    pub fn grad_log_h(&self, y: &RealVector) -> Result<RealVector> {
        match self {
            NoiseModel::Gamma { l } => {
                if y.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Domain("gamma measurements must be positive".into()));
                }
                Ok(y.map(|v| (l - 1.0) / v))
            }
            NoiseModel::Poisson { .. } => Err(Error::Capability(
                "Poisson noise has a discrete base measure; use PURE instead".into(),
            )),
            _ => {
                let p = self.precision(y.len())?;
                Ok(-(p * y))
            }
        }
    }

    /// Natural parameter `eta(x)` targeted by the generalized SURE loss.
    pub fn natural_parameter(&self, x: &RealVector) -> Result<RealVector> {
        match self {
            NoiseModel::Gamma { l } => Ok(x.map(|v| -l / v)),
            NoiseModel::Poisson { .. } => Err(Error::Capability("no continuous natural parameter for Poisson".into())),
            _ => Ok(self.precision(x.len())? * x),
        }
    }

    fn precision(&self, m: usize) -> Result<RealMatrix> {
        let c = self.covariance(m)?;
        if c.diagonal().iter().any(|v| *v == 0.0) {
            return Err(Error::Domain("noise covariance is singular".into()));
        }
        Ok(match self {
            NoiseModel::GaussianCorrelated { .. } => linalg::pinv(&c, 1e-12),
            _ => RealMatrix::from_diagonal(&c.diagonal().map(|v| 1.0 / v)),
        })
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", "alpha out of (0,1)"));
    }
    Ok(())
}

fn circulant(filter: &[f64], m: usize) -> RealMatrix {
    let mut c = RealMatrix::zeros(m, m);
    for i in 0..m {
        for (j, f) in filter.iter().enumerate() {
            c[(i, (i + m - j) % m)] += f;
        }
    }
    c
}

pub fn zero_outside(y: &RealVector, support: &[bool]) -> RealVector {
    RealVector::from_iterator(y.len(), y.iter().zip(support).map(|(v, s)| if *s { *v } else { 0.0 }))
}

/// `||mean||^2 / mean squared deviation` over repeated draws; `+inf` without spread.
pub fn snr(samples: &[RealVector]) -> f64 {
    let k = samples.len() as f64;
    let mut mean = RealVector::zeros(samples[0].len());
    for s in samples {
        mean += s;
    }
    mean /= k;
    let dev: f64 = samples.iter().map(|s| (s - &mean).norm_squared()).sum::<f64>() / k;
    if dev == 0.0 {
        return f64::INFINITY;
    }
    mean.norm_squared() / dev
}

/// Estimate with its standard error and the value predicted by theory.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Checked {
    pub estimate: f64,
    pub se: f64,
    pub expected: f64,
}

impl Checked {
    pub fn within(&self, k: f64) -> bool {
        (self.estimate - self.expected).abs() <= k * self.se
    }
}

/// Empirical structure of recorrupted pairs at a fixed clean signal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitCheck {
    /// Per entry: `E[(y1 - x)(y2 - x)]`, expected 0.
    pub cross_covariance: Vec<Checked>,
    /// Per entry: `Var(y1)`, expected `Var(y) / (1 - alpha)`.
    pub var_y1: Vec<Checked>,
    /// Per entry: `Var(y2)`, expected `Var(y) / alpha`.
    pub var_y2: Vec<Checked>,
    /// `SNR(y1) / SNR(y)`, expected `1 - alpha`.
    pub snr_ratio: f64,
}

pub fn snr_split_check(
    model: &NoiseModel,
    x: &RealVector,
    alpha: f64,
    trials: usize,
    rng: &mut RngStream,
) -> Result<SplitCheck> {
    check_alpha(alpha)?;
    let m = x.len();
    let var_y = model.conditional_variance(x)?;
    let mut cross = vec![Vec::with_capacity(trials); m];
    let mut d1 = vec![Vec::with_capacity(trials); m];
    let mut d2 = vec![Vec::with_capacity(trials); m];
    let mut dy = vec![Vec::with_capacity(trials); m];
    for _ in 0..trials {
        let y = model.corrupt(x, rng)?;
        let (y1, y2) = model.gr2r_pair(&y, alpha, rng)?;
        for i in 0..m {
            let (a, b) = (y1[i] - x[i], y2[i] - x[i]);
            cross[i].push(a * b);
            d1[i].push(a * a);
            d2[i].push(b * b);
            dy[i].push((y[i] - x[i]).powi(2));
        }
    }
    let check = |v: &Vec<f64>, expected: f64| {
        let (estimate, se) = linalg::mean_se(v);
        Checked { estimate, se, expected }
    };
    let total = |d: &Vec<Vec<f64>>| d.iter().map(|v| v.iter().sum::<f64>()).sum::<f64>();
    Ok(SplitCheck {
        cross_covariance: cross.iter().map(|v| check(v, 0.0)).collect(),
        var_y1: (0..m).map(|i| check(&d1[i], var_y[i] / (1.0 - alpha))).collect(),
        var_y2: (0..m).map(|i| check(&d2[i], var_y[i] / alpha)).collect(),
        snr_ratio: total(&dy) / total(&d1),
    })
}
