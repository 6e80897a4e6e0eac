//! Fixtures shared by the criterion benches.

use selfsup::harness::{single_gaussian, Testbed};
use selfsup::{Batch, Constraint, Estimator, NoiseModel, Result, RngStream};

pub const SIGMA: f64 = 0.5;

pub fn noise() -> NoiseModel {
    NoiseModel::GaussianIso { sigma: SIGMA }
}

/// Gaussian denoising batch of `items` measurements in dimension `n`.
pub fn denoising_batch(n: usize, items: usize, seed: u64) -> Result<Batch> {
    let tb = Testbed::denoising(single_gaussian(n, 1.0)?, noise())?;
    tb.batch(items, &RngStream::new(seed, 0))
}

/// Same batch with a second independent measurement per item.
pub fn paired_batch(n: usize, items: usize, seed: u64) -> Result<Batch> {
    let tb = Testbed::denoising(single_gaussian(n, 1.0)?, noise())?.with_pairs();
    tb.batch(items, &RngStream::new(seed, 0))
}

/// Affine map with small random weights.
pub fn random_affine(n: usize, seed: u64) -> Result<Estimator> {
    let mut rng = RngStream::new(seed, 1);
    let mut est = Estimator::affine_zeros(n, Constraint::None)?;
    let p: Vec<f64> = rng.normal_vec(est.num_params()).into_iter().map(|v| 0.1 * v).collect();
    est.set_params(&p)?;
    Ok(est)
}

pub fn mlp(n: usize, hidden: usize, seed: u64) -> Result<Estimator> {
    Estimator::mlp(&[n, hidden, hidden, n], &mut RngStream::new(seed, 2))
}
