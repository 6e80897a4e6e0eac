//! Test-time averaging over recorruptions and splits, and the Noisier2Noise
//! correction.

use serde::{Deserialize, Serialize};

use super::masks::{zero_fill, MaskGenerator, SplitDistribution};
use crate::error::{Error, Result};
use crate::estimators::{Affine, Estimator};
use crate::linalg::{RealMatrix, RealVector};
use crate::noise::{check_alpha, zero_outside, NoiseModel};
use crate::operators::LinearOperator;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestTime {
    /// Single evaluation `f(y, A)`.
    Plain,
    /// `(1/J) sum_j f(y1^(j))` over recorrupted inputs.
    R2r { noise: NoiseModel, alpha: f64, j: usize },
    /// Each pixel predicted from the masks that hold it out, weights summing to one.
    /// Noise2self masks are enumerated; other generators are drawn `j` times.
    Split { masks: MaskGenerator, j: usize },
    /// `(1/J) sum_j f(y1^(j), A1^(j))` over measurement splits.
    Msplit { split: SplitDistribution, j: usize },
    /// `Qbar^{-1} (1/J) sum_j Q_{A1^(j)} f(y1^(j), A1^(j))`, `Qbar` the empirical mean of the `Q_{A1^(j)}`.
    QWeighted { split: SplitDistribution, j: usize },
}

impl TestTime {
    fn count(&self) -> usize {
        match self {
            TestTime::Plain => 1,
            TestTime::R2r { j, .. }
            | TestTime::Split { j, .. }
            | TestTime::Msplit { j, .. }
            | TestTime::QWeighted { j, .. } => *j,
        }
    }
}

/// Reconstruction of `x` from `(y, A)` under the given averaging mode.
pub fn test_time_estimate(
    mode: &TestTime,
    est: &Estimator,
    y: &RealVector,
    op: &LinearOperator,
    rng: &mut RngStream,
) -> Result<RealVector> {
    let j = mode.count();
    if j == 0 {
        return Err(Error::param("j", "need at least one evaluation"));
    }
    let n = op.n();
    match mode {
        TestTime::Plain => est.forward(y, op),
        TestTime::R2r { noise, alpha, .. } => {
            check_alpha(*alpha)?;
            let support = op.row_support();
            let mut acc = RealVector::zeros(n);
            for _ in 0..j {
                let (y1, _) = noise.gr2r_pair(y, *alpha, rng)?;
                acc += est.forward(&zero_outside(&y1, &support), op)?;
            }
            Ok(acc / j as f64)
        }
        TestTime::Split { masks, .. } => {
            if op.n() != op.m() {
                return Err(Error::Capability("cross-validation splits are for denoising".into()));
            }
            masks.validate(n)?;
            let draws: Vec<(Vec<bool>, RealVector)> = match masks {
                MaskGenerator::Noise2Self { j: k } => MaskGenerator::noise2self_masks(n, *k)
                    .into_iter()
                    .map(|held| {
                        let keep: Vec<bool> = held.iter().map(|h| !h).collect();
                        let input = zero_fill(y, &keep);
                        (keep, input)
                    })
                    .collect(),
                _ => (0..j)
                    .map(|_| masks.generate(y, rng).map(|d| (d.keep, d.input)))
                    .collect::<Result<_>>()?,
            };
            let preds = draws.iter().map(|(_, inp)| est.forward(inp, op)).collect::<Result<Vec<_>>>()?;
            let weights = split_weights(&draws.iter().map(|d| d.0.clone()).collect::<Vec<_>>());
            let mut out = RealVector::zeros(n);
            for (p, w) in preds.iter().zip(&weights) {
                for i in 0..n {
                    out[i] += w[i] * p[i];
                }
            }
            Ok(out)
        }
        TestTime::Msplit { split, .. } => {
            let mut acc = RealVector::zeros(n);
            for _ in 0..j {
                let sp = split.sample(op, y, rng)?;
                acc += est.forward(&sp.y1, &sp.a1)?;
            }
            Ok(acc / j as f64)
        }
        TestTime::QWeighted { split, .. } => {
            let mut acc = RealVector::zeros(n);
            let mut qbar = RealVector::zeros(n);
            for _ in 0..j {
                let sp = split.sample(op, y, rng)?;
                let q = RealVector::from_vec(split.q_diagonal(&sp.a1)?);
                acc += est.forward(&sp.y1, &sp.a1)?.component_mul(&q);
                qbar += q;
            }
            Ok(acc.component_div(&qbar))
        }
    }
}

/// Per-pixel weights `w_i^(j)` of split averaging: uniform over the masks that
/// hold pixel `i` out, or over all masks if none does.
pub fn split_weights(keeps: &[Vec<bool>]) -> Vec<Vec<f64>> {
    let n = keeps.first().map_or(0, |k| k.len());
    let held: Vec<usize> = (0..n).map(|i| keeps.iter().filter(|k| !k[i]).count()).collect();
    keeps
        .iter()
        .map(|k| {
            (0..n)
                .map(|i| match held[i] {
                    0 => 1.0 / keeps.len() as f64,
                    h => if k[i] { 0.0 } else { 1.0 / h as f64 },
                })
                .collect()
        })
        .collect()
}

/// Noisier2Noise correction `((1 + tau^2) f(y1) - y1) / tau^2` with `y1` taken
/// through the back-projection.
pub fn noisier2noise_correct(est: &Estimator, y1: &RealVector, op: &LinearOperator, tau: f64) -> Result<RealVector> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", "must be positive"));
    }
    let t2 = tau * tau;
    Ok((est.forward(y1, op)? * (1.0 + t2) - op.pinv_apply(y1)?) / t2)
}

/// The corrected map of an affine Noisier2Noise estimator as an affine map.
pub fn noisier2noise_affine(a: &Affine, tau: f64) -> Result<Affine> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", "must be positive"));
    }
    let t2 = tau * tau;
    let n = a.w.nrows();
    let w: RealMatrix = (&a.w * (1.0 + t2) - RealMatrix::identity(n, a.w.ncols())) / t2;
    Affine::new(w, &a.b * ((1.0 + t2) / t2), a.constraint)
}
