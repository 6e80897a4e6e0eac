//! Paired Monte Carlo comparisons of a self-supervised loss with its supervised target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::linalg::{mean_se, RealMatrix, RealVector};
use crate::losses::{item_values, Batch, Loss, Metric};
use crate::noise::{zero_outside, NoiseModel};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedGap {
    pub gap: f64,
    pub se: f64,
    pub items: usize,
}

impl PairedGap {
    pub fn within(&self, k: f64) -> bool {
        self.gap.abs() <= k * self.se
    }
}

/// The `x`-dependent constant separating `E[L_self]` from the supervised risk.
pub fn loss_offset(loss: &Loss, data_noise: &NoiseModel, x: &RealVector) -> Result<f64> {
    Ok(match loss {
        Loss::Noise2Noise => match data_noise {
            NoiseModel::GaussianIso { sigma } => sigma * sigma,
            other => other.covariance(x.len())?.trace() / x.len() as f64,
        },
        Loss::R2r { noise, alpha, metric: Metric::L2, .. } => match noise {
            NoiseModel::GaussianIso { sigma } => sigma * sigma / alpha,
            NoiseModel::Poisson { gamma } => gamma * x.mean() / alpha,
            NoiseModel::Gamma { l } => x.map(|v| v * v).mean() / (l * alpha),
            other => other.covariance(x.len())?.trace() / (x.len() as f64 * alpha),
        },
        Loss::Pure { gamma, .. } => gamma * x.mean(),
        Loss::Sure { .. } | Loss::Gsure { .. } | Loss::Supervised => 0.0,
        other => return Err(Error::Capability(format!("no unbiasedness offset for {}", other.name()))),
    })
}

/// `mean(L_self - L_sup - c(x))` over items, with the supervised term evaluated
/// at the same input the loss feeds the estimator (the recorrupted `y1` for R2R).
pub fn unbiased_gap(loss: &Loss, data_noise: &NoiseModel, batch: &Batch, est: &Estimator, rng: &RngStream) -> Result<PairedGap> {
    let selfv = item_values(loss, batch, est, rng)?;
    let mut d = Vec::with_capacity(batch.len());
    for (i, it) in batch.items.iter().enumerate() {
        let x = it.x.as_ref().ok_or_else(|| Error::Capability("needs clean signals".into()))?;
        let input = match loss {
            Loss::R2r { noise, alpha, resamples: 1, .. } => {
                let (y1, _) = noise.gr2r_pair(&it.y, *alpha, &mut rng.derive(i as u64))?;
                zero_outside(&y1, &it.op.row_support())
            }
            Loss::R2r { .. } => return Err(Error::Capability("paired gap needs a single resample".into())),
            _ => it.y.clone(),
        };
        let sup = (est.forward(&input, &it.op)? - x).norm_squared() / x.len() as f64;
        d.push(selfv[i] - sup - loss_offset(loss, data_noise, x)?);
    }
    let (gap, se) = mean_se(&d);
    Ok(PairedGap { gap, se, items: d.len() })
}

/// `mean(L_a - L_b - offset)` for two losses on the same items.
/// `rng` must not be the stream the batch was drawn from.
pub fn loss_difference(a: &Loss, b: &Loss, offset: f64, batch: &Batch, est: &Estimator, rng: &RngStream) -> Result<PairedGap> {
    let va = item_values(a, batch, est, &rng.derive(1))?;
    let vb = item_values(b, batch, est, &rng.derive(2))?;
    let d: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y - offset).collect();
    let (gap, se) = mean_se(&d);
    Ok(PairedGap { gap, se, items: d.len() })
}

/// A fixed, generic affine map `0.6 I + 0.1 G` with bias `0.2 g`.
pub fn fixed_affine(n: usize, seed: u64) -> Result<Estimator> {
    let mut r = RngStream::new(seed, 99);
    let w = RealMatrix::identity(n, n) * 0.6 + RealMatrix::from_fn(n, n, |_, _| 0.1 * r.normal());
    let b = RealVector::from_fn(n, |_, _| 0.2 * r.normal());
    Estimator::affine(w, b, crate::estimators::Constraint::None)
}
