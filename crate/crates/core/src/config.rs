//! Declarative experiment configuration and the single-run driver.
//!
//! Configs are JSON. Every object rejects unknown keys, and parse errors carry
//! the path of the offending field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Estimator, EstimatorSpec, TraceBackend};
use crate::harness::{
    content_hash, low_rank_gaussian, oracle_mse, positive_two_component, shift_invariant_atoms, single_gaussian,
    timestamp_now, train, two_component, ExperimentReport, MetricRow, Testbed, TrainConfig, TrainData,
};
use crate::linalg::{mean_se, RealVector};
use crate::losses::{
    Consistency, CovBasis, Loss, MaskGenerator, Metric, MsplitVariant, PureBackend, PureSign, SplitDistribution,
};
use crate::noise::NoiseModel;
use crate::operators::{GroupAction, LinearOperator, OperatorDistribution, OperatorSpec};
use crate::priors::{AtomPrior, GmmPrior, Prior};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Zero-mean isotropic Gaussian with standard deviation `s0`.
    Gaussian { n: usize, s0: f64 },
    /// Components at `+-mu 1` with variance `variance`.
    TwoComponent { n: usize, mu: f64, variance: f64 },
    PositiveTwoComponent { n: usize },
    LowRank { n: usize, rank: usize, strong: f64, weak: f64, seed: u64 },
    /// Isotropic mixture.
    Gmm { weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64> },
    Atoms {
        atoms: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Every circular shift of random band-limited patterns.
    ShiftInvariantAtoms { n: usize, harmonics: Vec<usize>, patterns: usize, seed: u64 },
}

impl PriorSpec {
    pub fn build(&self) -> Result<Prior> {
        match self {
            PriorSpec::Gaussian { n, s0 } => single_gaussian(*n, *s0),
            PriorSpec::TwoComponent { n, mu, variance } => two_component(*n, *mu, *variance),
            PriorSpec::PositiveTwoComponent { n } => positive_two_component(*n),
            PriorSpec::LowRank { n, rank, strong, weak, seed } => low_rank_gaussian(*n, *rank, *strong, *weak, *seed),
            PriorSpec::Gmm { weights, means, variances } => {
                let means = means.iter().map(|m| RealVector::from_vec(m.clone())).collect();
                Ok(Prior::Gmm(GmmPrior::isotropic(weights.clone(), means, variances)?))
            }
            PriorSpec::Atoms { atoms, weights } => {
                let atoms: Vec<RealVector> = atoms.iter().map(|a| RealVector::from_vec(a.clone())).collect();
                Ok(Prior::Atoms(match weights {
                    Some(w) => AtomPrior::new(atoms, w.clone())?,
                    None => AtomPrior::uniform(atoms)?,
                }))
            }
            PriorSpec::ShiftInvariantAtoms { n, harmonics, patterns, seed } => {
                shift_invariant_atoms(*n, harmonics, *patterns, &mut RngStream::new(*seed, 0))
            }
        }
    }
}

/// A random operator: a weighted finite set or independent pixel masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorDistSpec {
    Finite {
        ops: Vec<OperatorSpec>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    BernoulliMask { p: Vec<f64> },
}

impl OperatorDistSpec {
    pub fn build(&self) -> Result<OperatorDistribution> {
        match self {
            OperatorDistSpec::Finite { ops, weights } => {
                let ops = ops.iter().map(|o| o.build()).collect::<Result<Vec<_>>>()?;
                match weights {
                    Some(w) => OperatorDistribution::finite(ops, w.clone()),
                    None => OperatorDistribution::uniform(ops),
                }
            }
            OperatorDistSpec::BernoulliMask { p } => OperatorDistribution::bernoulli(p.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupSpec {
    CircularShifts { h: usize, w: usize },
    Flips { h: usize, w: usize },
    Rotations90 { side: usize },
    AmplitudeScalings { n: usize, gains: Vec<f64> },
}

impl GroupSpec {
    pub fn build(&self) -> Result<GroupAction> {
        Ok(match self {
            GroupSpec::CircularShifts { h, w } => GroupAction::circular_shifts(*h, *w),
            GroupSpec::Flips { h, w } => GroupAction::flips(*h, *w),
            GroupSpec::Rotations90 { side } => GroupAction::rotations90(*side),
            GroupSpec::AmplitudeScalings { n, gains } => GroupAction::amplitude_scalings(*n, gains)?,
        })
    }
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn hutchinson() -> TraceBackend {
    TraceBackend::Hutchinson { probes: 1 }
}

fn exact_shift() -> PureBackend {
    PureBackend::ExactShift { sign: PureSign::Minus }
}

fn plain() -> MsplitVariant {
    MsplitVariant::Plain
}

/// Loss description. Noise models default to the experiment's noise; giving
/// one explicitly models a misspecified noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    Supervised,
    Mc,
    Noise2Noise,
    R2r {
        alpha: f64,
        #[serde(default = "one")]
        resamples: usize,
        #[serde(default)]
        metric: Metric,
        #[serde(default)]
        noise: Option<NoiseModel>,
    },
    Sure {
        #[serde(default = "hutchinson")]
        backend: TraceBackend,
        #[serde(default)]
        noise: Option<NoiseModel>,
    },
    Pure {
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "exact_shift")]
        backend: PureBackend,
    },
    Gsure {
        #[serde(default = "hutchinson")]
        backend: TraceBackend,
        #[serde(default)]
        noise: Option<NoiseModel>,
    },
    Unsure {
        basis: CovBasis,
        #[serde(default = "hutchinson")]
        backend: TraceBackend,
    },
    SplitCv { masks: MaskGenerator },
    Msplit {
        split: SplitDistribution,
        #[serde(default = "plain")]
        variant: MsplitVariant,
    },
    Moi {
        operators: OperatorDistSpec,
        #[serde(default = "unit")]
        lambda: f64,
        #[serde(default)]
        consistency: Option<Consistency>,
    },
    Ei {
        group: GroupSpec,
        #[serde(default = "unit")]
        lambda: f64,
        #[serde(default)]
        consistency: Option<Consistency>,
        #[serde(default)]
        all_elements: bool,
    },
    Esplit {
        group: GroupSpec,
        split: SplitDistribution,
        #[serde(default)]
        all_elements: bool,
    },
    Noisier2Noise { tau: f64 },
}

impl LossSpec {
    /// Build against the experiment noise; `m` is the measurement dimension.
    pub fn build(&self, noise: &NoiseModel, m: usize) -> Result<Loss> {
        let pick = |n: &Option<NoiseModel>| n.clone().unwrap_or_else(|| noise.clone());
        let loss = match self {
            LossSpec::Supervised => Loss::Supervised,
            LossSpec::Mc => Loss::Mc,
            LossSpec::Noise2Noise => Loss::Noise2Noise,
            LossSpec::R2r { alpha, resamples, metric, noise: n } => {
                Loss::R2r { noise: pick(n), alpha: *alpha, resamples: *resamples, metric: *metric }
            }
            LossSpec::Sure { backend, noise: n } => Loss::Sure { noise: pick(n), backend: *backend },
            LossSpec::Pure { gamma, backend } => {
                let gamma = match (gamma, noise) {
                    (Some(g), _) => *g,
                    (None, NoiseModel::Poisson { gamma }) => *gamma,
                    _ => return Err(Error::param("loss.gamma", "needed unless the noise is Poisson")),
                };
                Loss::Pure { gamma, backend: *backend }
            }
            LossSpec::Gsure { backend, noise: n } => Loss::Gsure { noise: pick(n), backend: *backend },
            LossSpec::Unsure { basis, backend } => {
                let k = basis.matrices(m).len();
                Loss::Unsure { basis: basis.clone(), eta: vec![0.0; k], backend: *backend }
            }
            LossSpec::SplitCv { masks } => Loss::SplitCv { masks: masks.clone() },
            LossSpec::Msplit { split, variant } => Loss::Msplit { split: split.clone(), variant: variant.clone() },
            LossSpec::Moi { operators, lambda, consistency } => Loss::Moi {
                ops: operators.build()?,
                lambda: *lambda,
                consistency: consistency.clone().unwrap_or_else(|| Consistency::for_noise(Some(noise))),
            },
            LossSpec::Ei { group, lambda, consistency, all_elements } => Loss::Ei {
                group: group.build()?,
                lambda: *lambda,
                consistency: consistency.clone().unwrap_or_else(|| Consistency::for_noise(Some(noise))),
                all_elements: *all_elements,
            },
            LossSpec::Esplit { group, split, all_elements } => {
                Loss::Esplit { group: group.build()?, split: split.clone(), all_elements: *all_elements }
            }
            LossSpec::Noisier2Noise { tau } => Loss::Noisier2Noise { noise: noise.clone(), tau: *tau },
        };
        loss.validate()?;
        Ok(loss)
    }
}

fn default_test_items() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Measurements available for training and validation.
    pub items: usize,
    /// Oracle test items with ground truth.
    #[serde(default = "default_test_items")]
    pub test_items: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for the report; the output-directory environment variable overrides it.
    #[serde(default)]
    pub dir: Option<String>,
    /// File stem; defaults to `<name>-s<seed>`.
    #[serde(default)]
    pub stem: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub prior: PriorSpec,
    /// A single operator; identity of the prior's size when both fields are absent.
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default)]
    pub operators: Option<OperatorDistSpec>,
    pub noise: NoiseModel,
    pub estimator: EstimatorSpec,
    pub loss: LossSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// Parse, naming the path of the first offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parameter { field: path, reason: e.into_inner().to_string() }
        })?;
        Ok(cfg)
    }

    /// Canonical serialization, the input of the config hash.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn stem(&self) -> String {
        self.output.stem.clone().unwrap_or_else(|| format!("{}-s{}", self.name, self.seed))
    }

    fn operators(&self, n: usize) -> Result<OperatorDistribution> {
        match (&self.operator, &self.operators) {
            (Some(_), Some(_)) => Err(Error::param("operators", "give either `operator` or `operators`")),
            (Some(op), None) => OperatorDistribution::uniform(vec![op.build()?]),
            (None, Some(d)) => d.build(),
            (None, None) => OperatorDistribution::uniform(vec![LinearOperator::identity(n)]),
        }
    }

    /// Builds every component, so all checks happen before any training.
    pub fn build(&self) -> Result<Experiment> {
        if self.data.items < 2 {
            return Err(Error::param("data.items", "need at least two items"));
        }
        if self.data.test_items == 0 {
            return Err(Error::param("data.test_items", "must be positive"));
        }
        self.train.validate()?;
        let prior = self.prior.build()?;
        let n = prior.n();
        let ops = self.operators(n)?;
        let m = ops.sample(&mut RngStream::new(self.seed, 0)).m();
        let loss = self.loss.build(&self.noise, m)?;
        let mut testbed = Testbed::new(prior, self.noise.clone(), ops)?;
        if matches!(loss, Loss::Noise2Noise) {
            testbed = testbed.with_pairs();
        }
        let est = self.estimator.build(n, &mut RngStream::new(self.seed, 102))?;
        let mut train = self.train.clone();
        train.seed = self.seed;
        Ok(Experiment { testbed, loss, est, train })
    }
}

/// A validated, ready-to-run experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub testbed: Testbed,
    pub loss: Loss,
    pub est: Estimator,
    pub train: TrainConfig,
}

/// Posterior-mean error on the test items, when the prior supports it.
fn oracle_on(tb: &Testbed, test: &crate::losses::Batch) -> Option<(f64, f64)> {
    let mut v = Vec::with_capacity(test.len());
    for it in &test.items {
        let pm = tb.prior.posterior_mean(&tb.noise, &it.op, &it.y).ok()?;
        v.push((pm - it.x.as_ref()?).norm_squared() / it.op.n() as f64);
    }
    Some(mean_se(&v))
}

/// Runs one configured experiment: train with hold-out validation, then score
/// the selected estimator against the oracle test set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Estimator, ExperimentReport)> {
    let ex = cfg.build()?;
    let all = ex.testbed.batch(cfg.data.items, &RngStream::new(cfg.seed, 100))?;
    let test = ex.testbed.batch(cfg.data.test_items, &RngStream::new(cfg.seed, 101))?;
    let data = TrainData::holdout(all, ex.train.val_fraction, Some(test.clone()))?;
    let out = train(&ex.loss, ex.est, &data, &ex.train)?;
    let (mse, mse_se) = oracle_mse(&out.est, &test)?;
    let mmse = oracle_on(&ex.testbed, &test);
    let final_val_loss = out.records[out.best_epoch].val_loss;

    let mut rows = vec![
        MetricRow::new(ex.loss.name(), "val_loss", final_val_loss, 0.0).note("self-supervised hold-out loss"),
        {
            let r = MetricRow::new(ex.loss.name(), "test_mse", mse, mse_se);
            match mmse {
                Some((m, _)) => r.reference(m).note("oracle test error; reference is the posterior-mean error"),
                None => r.note("oracle test error"),
            }
        },
    ];
    if let Some((m, s)) = mmse {
        rows.push(MetricRow::new("posterior_mean", "test_mse", m, s).note("Bayes oracle"));
    }
    let hash = content_hash(cfg.canonical_json()?.as_bytes());
    let report = ExperimentReport {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        config_hash: hash,
        loss: ex.loss.name().into(),
        epochs: out.records.clone(),
        best_epoch: out.best_epoch,
        final_val_loss,
        test_mse: Some(mse),
        test_mse_se: Some(mse_se),
        mmse: mmse.map(|m| m.0),
        multipliers: crate::harness::multipliers(&out.loss),
        variance: None,
        gradient_variance: None,
        rows,
        timestamp: timestamp_now(),
    };
    Ok((out.est, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "denoise",
        "prior": {"kind": "gaussian", "n": 2, "s0": 1.0},
        "noise": {"kind": "gaussian_iso", "sigma": 1.0},
        "estimator": {"kind": "affine"},
        "loss": {"kind": "sure", "backend": {"kind": "analytic"}},
        "data": {"items": 100}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.data.test_items, 2000);
        assert_eq!(c.train, TrainConfig::default());
        assert!(c.build().is_ok());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let bad = MINIMAL.replace("\"s0\": 1.0", "\"s0\": 1.0, \"colour\": 3");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Parameter { field, reason }) => {
                assert_eq!(field, "prior");
                assert!(reason.contains("colour"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_is_checked_before_training() {
        let bad = MINIMAL.replace(r#""kind": "sure", "backend": {"kind": "analytic"}"#, r#""kind": "r2r", "alpha": 1.5"#);
        let c = ExperimentConfig::from_json(&bad).unwrap();
        let e = c.build().unwrap_err();
        assert!(e.to_string().contains("alpha out of (0,1)"), "{e}");
    }
}
