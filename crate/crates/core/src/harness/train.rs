//! Training loop with self-supervised hold-out validation and early stopping.

use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerSpec};
use super::testbed::{oracle_mse, TrainData};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::linalg::{self, RealMatrix, RealVector};
use crate::losses::{evaluate, Batch, Loss};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    /// Ascent step for the UNSURE multipliers.
    #[serde(default = "default_eta_lr")]
    pub eta_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_patience() -> usize {
    20
}
fn default_val() -> f64 {
    0.2
}
fn default_eta_lr() -> f64 {
    0.05
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerSpec::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            patience: default_patience(),
            val_fraction: default_val(),
            eta_lr: default_eta_lr(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn exact(seed: u64) -> Self {
        TrainConfig { optimizer: OptimizerSpec::ExactQuadratic, epochs: 1, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::param("val_fraction", "must lie in [0, 1)"));
        }
        if !(self.eta_lr >= 0.0) {
            return Err(Error::param("eta_lr", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub oracle_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Estimator at the best validation epoch.
    pub est: Estimator,
    /// The loss with its final UNSURE multipliers.
    pub loss: Loss,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;

fn check_finite(p: &[f64]) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence("parameters became non-finite".into()))
    }
}

fn shuffle(idx: &mut [usize], rng: &mut RngStream) {
    for i in (1..idx.len()).rev() {
        let j = rng.index(i + 1);
        idx.swap(i, j);
    }
}

fn eta_of(loss: &Loss) -> Option<&Vec<f64>> {
    match loss {
        Loss::Unsure { eta, .. } => Some(eta),
        _ => None,
    }
}

fn eta_mut(loss: &mut Loss) -> Option<&mut Vec<f64>> {
    match loss {
        Loss::Unsure { eta, .. } => Some(eta),
        _ => None,
    }
}

fn record(epoch: usize, train_loss: f64, loss: &Loss, est: &Estimator, data: &TrainData, seed: u64) -> Result<EpochRecord> {
    let val_loss = if data.val.is_empty() {
        train_loss
    } else {
        evaluate(loss, &data.val, est, &RngStream::new(seed, VAL_STREAM), false)?.value
    };
    let oracle = match &data.test {
        Some(t) => Some(oracle_mse(est, t)?.0),
        None => None,
    };
    Ok(EpochRecord { epoch, train_loss, val_loss, oracle_mse: oracle })
}

/// Train `est` on `loss`, returning the parameters of the epoch with the
/// lowest self-supervised validation loss.
pub fn train(loss: &Loss, est: Estimator, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    if data.train.is_empty() {
        return Err(Error::shape("empty training set"));
    }
    if cfg.optimizer == OptimizerSpec::ExactQuadratic {
        return train_exact(loss, est, data, cfg);
    }
    let mut est = est;
    let mut loss = loss.clone();
    let mut opt = Optimizer::new(cfg.optimizer, est.num_params())?;
    let init = evaluate(&loss, &data.train, &est, &RngStream::new(cfg.seed, TRAIN_STREAM), false)?.value;
    let mut records = vec![record(0, init, &loss, &est, data, cfg.seed)?];
    let mut best = (records[0].val_loss, 0, est.clone(), loss.clone());
    let mut stopped_early = false;
    let base = RngStream::new(cfg.seed, TRAIN_STREAM);
    let mut idx: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let erng = base.derive(epoch as u64);
        let mut srng = erng.derive(u64::MAX);
        shuffle(&mut idx, &mut srng);
        let mut total = 0.0;
        let mut seen = 0.0;
        for (step, chunk) in idx.chunks(cfg.batch_size).enumerate() {
            let batch = data.train.subset(chunk);
            let ev = evaluate(&loss, &batch, &est, &erng.derive(step as u64), true)?;
            let mut p = est.params();
            opt.step(&mut p, ev.grad.as_ref().expect("gradient requested"));
            check_finite(&p)?;
            est.set_params(&p)?;
            if let Some(eta) = eta_mut(&mut loss) {
                for (e, a) in eta.iter_mut().zip(&ev.aux) {
                    *e += cfg.eta_lr * a;
                }
            }
            total += ev.value * chunk.len() as f64;
            seen += chunk.len() as f64;
        }
        let rec = record(epoch, total / seen, &loss, &est, data, cfg.seed)?;
        if !rec.val_loss.is_finite() {
            return Err(Error::Divergence(format!("validation loss is not finite at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {:.6} val {:.6}", rec.train_loss, rec.val_loss);
        if rec.val_loss < best.0 {
            best = (rec.val_loss, epoch, est.clone(), loss.clone());
        }
        records.push(rec);
        if epoch - best.1 >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    let (_, best_epoch, est, loss) = best;
    Ok(TrainOutcome { est, loss, records, best_epoch, stopped_early })
}

fn with_eta(loss: &Loss, eta: &[f64]) -> Loss {
    let mut l = loss.clone();
    if let Some(e) = eta_mut(&mut l) {
        e.copy_from_slice(eta);
    }
    l
}

/// Full-batch gradient and UNSURE constraint values at `theta`.
fn probe(loss: &Loss, batch: &Batch, est: &Estimator, theta: &RealVector, rng: &RngStream) -> Result<(RealVector, Vec<f64>)> {
    let mut e = est.clone();
    e.set_params(theta.as_slice())?;
    let ev = evaluate(loss, batch, &e, rng, true)?;
    Ok((RealVector::from_vec(ev.grad.expect("gradient requested")), ev.aux))
}

/// Conjugate gradients for `H d = rhs` with `H` positive semi-definite and
/// available only through products.
fn conjugate_gradient<F>(hv: F, rhs: &RealVector, max_iter: usize) -> Result<RealVector>
where
    F: Fn(&RealVector) -> Result<RealVector>,
{
    let mut x = RealVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let stop = 1e-26 * rhs.norm_squared().max(1e-300);
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        let hp = hv(&p)?;
        let php = p.dot(&hp);
        if !(php > 0.0) {
            break;
        }
        let a = rr / php;
        x += &p * a;
        r -= &hp * a;
        let rn = r.norm_squared();
        p = &r + &p * (rn / rr);
        rr = rn;
    }
    Ok(x)
}

/// Exact minimizer of a loss that is quadratic in the parameters under fixed
/// random draws. For UNSURE the multipliers solve the saddle-point system.
fn train_exact(loss: &Loss, est: Estimator, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if !est.linear_in_params() {
        return Err(Error::Capability("exact solve needs an estimator linear in its parameters".into()));
    }
    let k = eta_of(loss).map_or(0, |e| e.len());
    let base = with_eta(loss, &vec![0.0; k]);
    let rng = RngStream::new(cfg.seed, TRAIN_STREAM);
    let theta0 = RealVector::from_vec(est.params());
    let p = theta0.len();
    let init = evaluate(&base, &data.train, &est, &rng, false)?.value;
    let rec0 = record(0, init, &base, &est, data, cfg.seed)?;
    let (g0, c0) = probe(&base, &data.train, &est, &theta0, &rng)?;
    let hv = |v: &RealVector| -> Result<RealVector> {
        let s = 1.0 / v.amax().max(1e-300);
        Ok((probe(&base, &data.train, &est, &(&theta0 + v * s), &rng)?.0 - &g0) / s)
    };
    let iters = 4 * p + 10;
    let d0 = conjugate_gradient(hv, &(-&g0), iters)?;
    let mut step = d0.clone();
    let mut eta = vec![];
    if k > 0 {
        // rows of C from the multiplier directions, then the k x k system for eta
        let mut ct = RealMatrix::zeros(p, k);
        let mut dm = RealMatrix::zeros(p, k);
        for j in 0..k {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            let cj = probe(&with_eta(loss, &e), &data.train, &est, &theta0, &rng)?.0 - &g0;
            dm.set_column(j, &conjugate_gradient(hv, &(-&cj), iters)?);
            ct.set_column(j, &cj);
        }
        let c = ct.transpose();
        let lhs = &c * &dm;
        let rhs = -(RealVector::from_vec(c0) + &c * &d0);
        let sol = linalg::pinv(&lhs, 1e-12) * rhs;
        step += &dm * &sol;
        eta = sol.iter().cloned().collect();
    }
    let theta = &theta0 + step;
    check_finite(theta.as_slice())?;
    let mut est = est;
    est.set_params(theta.as_slice())?;
    let loss = with_eta(loss, if k > 0 { &eta } else { &[] });
    let fin = evaluate(&loss, &data.train, &est, &rng, false)?.value;
    let rec1 = record(1, fin, &loss, &est, data, cfg.seed)?;
    Ok(TrainOutcome { est, loss, records: vec![rec0, rec1], best_epoch: 1, stopped_early: false })
}

/// Final UNSURE multipliers, empty for other losses.
pub fn multipliers(loss: &Loss) -> Vec<f64> {
    eta_of(loss).cloned().unwrap_or_default()
}
