//! Does the self-supervised validation loss pick a good epoch?

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::Estimator;
use crate::losses::Loss;
use crate::noise::NoiseModel;
use crate::rng::RngStream;

use super::optim::OptimizerSpec;
use super::testbed::{two_component, Testbed, TrainData};
use super::train::{train, TrainConfig};

/// A small network on few paired items, trained long enough to overfit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoldoutConfig {
    pub n: usize,
    pub sigma: f64,
    pub items: usize,
    pub val_fraction: f64,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub test_items: usize,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        HoldoutConfig {
            n: 8,
            sigma: 0.5,
            items: 100,
            val_fraction: 0.3,
            hidden: 64,
            lr: 0.01,
            epochs: 200,
            batch_size: 16,
            test_items: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRun {
    pub seed: u64,
    pub chosen_epoch: usize,
    pub chosen_mse: f64,
    pub best_epoch: usize,
    pub best_mse: f64,
    pub last_mse: f64,
}

impl HoldoutRun {
    /// Relative excess of the chosen epoch over the best one.
    pub fn excess(&self) -> f64 {
        self.chosen_mse / self.best_mse - 1.0
    }
}

/// Noise2Noise training with validation-based epoch selection, one run per seed.
pub fn holdout_experiment(cfg: &HoldoutConfig, seeds: &[u64]) -> Result<Vec<HoldoutRun>> {
    let noise = NoiseModel::GaussianIso { sigma: cfg.sigma };
    let tb = Testbed::denoising(two_component(cfg.n, 1.0, 0.5)?, noise)?.with_pairs();
    seeds
        .par_iter()
        .map(|&seed| {
            let all = tb.batch(cfg.items, &RngStream::new(seed, 40))?;
            let test = tb.batch(cfg.test_items, &RngStream::new(seed, 41))?;
            let data = TrainData::holdout(all, cfg.val_fraction, Some(test))?;
            let est = Estimator::mlp(&[cfg.n, cfg.hidden, cfg.n], &mut RngStream::new(seed, 42))?;
            let tc = TrainConfig {
                optimizer: OptimizerSpec::adam(cfg.lr),
                epochs: cfg.epochs,
                patience: cfg.epochs,
                batch_size: cfg.batch_size,
                seed,
                ..Default::default()
            };
            let out = train(&Loss::Noise2Noise, est, &data, &tc)?;
            let mse: Vec<f64> = out.records.iter().map(|r| r.oracle_mse.unwrap_or(f64::NAN)).collect();
            let (best_epoch, best_mse) =
                mse.iter().copied().enumerate().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            Ok(HoldoutRun {
                seed,
                chosen_epoch: out.best_epoch,
                chosen_mse: mse[out.best_epoch],
                best_epoch,
                best_mse,
                last_mse: mse[mse.len() - 1],
            })
        })
        .collect()
}
