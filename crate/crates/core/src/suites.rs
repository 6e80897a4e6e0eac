//! Named scenario suites at desk scale. Each returns a table of metric rows
//! with standard errors and pass flags; negative controls are marked as
//! expected failures and do not fail their suite.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Affine, Constraint, Estimator, TraceBackend};
use crate::harness::{
    fixed_affine, fixed_operator, gap_experiment, gmm_gap_config, gradient_variance_probe, loss_difference,
    low_rank_gaussian, noisier2noise_equivalence, nullspace_experiment, positive_two_component, single_gaussian,
    timestamp_now, train, two_component, unbiased_gap, variance_probe, MetricRow, NullspaceConfig, Testbed,
    TrainConfig, TrainData,
};
use crate::harness::affine_denoising_mse;
use crate::linalg::mean_se;
use crate::losses::{evaluate, Batch, CovBasis, Loss, Metric, MsplitVariant, PureBackend, SplitDistribution};
use crate::noise::NoiseModel;
use crate::operators::{GroupAction, LinearOperator};
use crate::priors::{zed_gap, Prior};
use crate::rng::RngStream;

pub const SUITES: [&str; 6] = ["unbiasedness", "misspecification", "nullspace", "sample_complexity", "variance", "equivalences"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Seconds per suite; looser standard errors.
    #[default]
    Smoke,
    /// The acceptance-scale sample sizes.
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Scale::Smoke),
            "full" => Ok(Scale::Full),
            other => Err(Error::param("scale", format!("unknown scale '{other}' (smoke or full)"))),
        }
    }
}

impl Scale {
    fn pick<T>(self, smoke: T, full: T) -> T {
        match self {
            Scale::Smoke => smoke,
            Scale::Full => full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub seed: u64,
    pub scale: Scale,
    pub rows: Vec<MetricRow>,
    pub passed: bool,
    /// Not part of any hash.
    pub timestamp: String,
}

impl ScenarioResult {
    fn new(scenario: &str, seed: u64, scale: Scale, rows: Vec<MetricRow>) -> Self {
        let passed = !rows.iter().any(|r| r.failed());
        ScenarioResult { scenario: scenario.into(), seed, scale, rows, passed, timestamp: timestamp_now() }
    }

    pub fn failures(&self) -> Vec<&MetricRow> {
        self.rows.iter().filter(|r| r.failed()).collect()
    }

    /// Fixed-width table, one line per row, citing the property each row checks.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} (seed {}, {:?})", self.scenario, self.seed, self.scale);
        let _ = writeln!(s, "{:<28} {:<16} {:>12} {:>10} {:>12}  {:<13} check", "method", "metric", "value", "se", "reference", "status");
        for r in &self.rows {
            let status = match (r.pass, r.expected_fail) {
                (Some(true), false) => "pass",
                (Some(false), false) => "FAIL",
                (_, true) => "expected-fail",
                (None, false) => "info",
            };
            let reference = r.reference.map(|v| format!("{v:.5e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:<28} {:<16} {:>12.5e} {:>10.2e} {:>12}  {:<13} {}",
                r.method, r.metric, r.value, r.se, reference, status, r.note
            );
        }
        let _ = writeln!(s, "{}", if self.passed { "suite passed" } else { "suite FAILED" });
        s
    }
}

pub fn run_suite(name: &str, scale: Scale, seed: u64) -> Result<ScenarioResult> {
    let rows = match name {
        "unbiasedness" => unbiasedness(scale, seed)?,
        "misspecification" => misspecification(scale, seed)?,
        "nullspace" => nullspace(scale, seed)?,
        "sample_complexity" => sample_complexity(scale, seed)?,
        "variance" => variance(scale, seed)?,
        "equivalences" => equivalences(scale, seed)?,
        other => return Err(Error::param("suite", format!("unknown suite '{other}'; expected one of {}", SUITES.join(", ")))),
    };
    Ok(ScenarioResult::new(name, seed, scale, rows))
}

fn gap_row(method: &str, g: &crate::harness::PairedGap, note: &str) -> MetricRow {
    MetricRow::new(method, "bias", g.gap, g.se).reference(0.0).check(g.within(3.0)).note(note)
}

fn unbiasedness(scale: Scale, seed: u64) -> Result<Vec<MetricRow>> {
    let items = scale.pick(20_000, 100_000);
    let sizes: &[usize] = scale.pick(&[4], &[1, 4, 16]);
    let g = NoiseModel::GaussianIso { sigma: 0.5 };
    let pois = NoiseModel::Poisson { gamma: 0.5 };
    let gam = NoiseModel::Gamma { l: 10.0 };
    let r2r = |noise: &NoiseModel| Loss::R2r { noise: noise.clone(), alpha: 0.5, resamples: 1, metric: Metric::L2 };
    let mut rows = Vec::new();
    for &n in sizes {
        let est = fixed_affine(n, seed)?;
        let gauss = Testbed::denoising(two_component(n, 1.0, 0.5)?, g.clone())?;
        let ptb = Testbed::denoising(positive_two_component(n)?, pois.clone())?;
        let gtb = Testbed::denoising(positive_two_component(n)?, gam.clone())?;
        let cases: Vec<(&str, Loss, Testbed, &str)> = vec![
            ("n2n", Loss::Noise2Noise, gauss.clone().with_pairs(), "E[L_N2N] = E[L_SUP] + sigma^2"),
            ("r2r_gaussian", r2r(&g), gauss.clone(), "E[L_R2R] = E[L_SUP(y1)] + sigma^2/alpha"),
            ("gr2r_poisson", r2r(&pois), ptb.clone(), "GR2R Poisson offset gamma mean(x)/alpha"),
            ("gr2r_gamma", r2r(&gam), gtb, "GR2R gamma offset mean(x^2)/(l alpha)"),
            ("sure_analytic", Loss::Sure { noise: g.clone(), backend: TraceBackend::Analytic }, gauss.clone(), "Stein: E[L_SURE] = E[L_SUP]"),
            ("sure_hutchinson", Loss::Sure { noise: g.clone(), backend: TraceBackend::Hutchinson { probes: 1 } }, gauss.clone(), "Stein with Hutchinson trace"),
            ("sure_ramani", Loss::Sure { noise: g.clone(), backend: TraceBackend::Ramani { tau: 1e-3, probes: 1 } }, gauss, "Stein with finite-difference trace"),
            ("pure", Loss::Pure { gamma: 0.5, backend: PureBackend::ExactShift { sign: Default::default() } }, ptb, "Hudson: E[L_PURE] = E[L_SUP] + gamma mean(x)"),
        ];
        for (k, (name, loss, tb, note)) in cases.into_iter().enumerate() {
            let batch = tb.batch(items, &RngStream::new(seed, 200 + k as u64).derive(n as u64))?;
            let gap = unbiased_gap(&loss, &tb.noise, &batch, &est, &RngStream::new(seed, 300 + k as u64))?;
            rows.push(gap_row(&format!("{name} n={n}"), &gap, note));
        }
    }
    Ok(rows)
}

fn exact_fit(loss: &Loss, tb: &Testbed, items: usize, seed: u64) -> Result<Affine> {
    let data = TrainData { train: tb.batch(items, &RngStream::new(seed, 20))?, val: Batch::default(), test: None };
    let out = train(loss, Estimator::affine_zeros(tb.n(), Constraint::None)?, &data, &TrainConfig::exact(seed))?;
    match out.est {
        Estimator::Affine(a) => Ok(a),
        _ => unreachable!("affine in, affine out"),
    }
}

fn affine_mse(a: &Affine, prior: &Prior, noise: &NoiseModel) -> Result<f64> {
    Ok(affine_denoising_mse(a, &prior.mean(), &prior.covariance(), &noise.covariance(prior.n())?))
}

fn misspecification(scale: Scale, seed: u64) -> Result<Vec<MetricRow>> {
    let noise = NoiseModel::GaussianIso { sigma: 1.0 };
    let unsure = Loss::Unsure { basis: CovBasis::Scalar, eta: vec![0.0], backend: TraceBackend::Analytic };
    let mut rows = Vec::new();

    let prior = single_gaussian(1, 1.0)?;
    let tb = Testbed::denoising(prior.clone(), noise.clone())?;
    let a = exact_fit(&unsure, &tb, scale.pick(50_000, 200_000), seed)?;
    let mse = affine_mse(&a, &prior, &noise)?;
    let target = zed_gap(0.5, 1.0)?;
    rows.push(
        MetricRow::new("unsure", "mse_single_gaussian", mse, 0.0)
            .reference(target)
            .check((mse / target - 1.0).abs() <= 0.05)
            .note("UNSURE gap MMSE/(1 - MMSE/sigma^2), 5%"),
    );

    let n = 16;
    let prior = low_rank_gaussian(n, 4, 10.0, 0.01, 17)?;
    let tb = Testbed::denoising(prior.clone(), noise.clone())?;
    let seeds = scale.pick(5, 15);
    let mut mu = Vec::new();
    let mut ms = [Vec::new(), Vec::new()];
    let mut wins = [0usize; 2];
    for s in 0..seeds {
        let sd = seed.wrapping_mul(1000) + 300 + s as u64;
        let u = affine_mse(&exact_fit(&unsure, &tb, 2000, sd)?, &prior, &noise)?;
        mu.push(u);
        for (k, f) in [0.5, 1.5].iter().enumerate() {
            let sure = Loss::Sure { noise: NoiseModel::GaussianIso { sigma: *f }, backend: TraceBackend::Analytic };
            let v = affine_mse(&exact_fit(&sure, &tb, 2000, sd)?, &prior, &noise)?;
            ms[k].push(v);
            wins[k] += usize::from(v > u);
        }
    }
    let (m, s) = mean_se(&mu);
    rows.push(MetricRow::new("unsure", "mse_low_rank", m, s).note("noise level learned jointly"));
    for (k, label) in ["sure_sigma_x0.5", "sure_sigma_x1.5"].iter().enumerate() {
        let (m, s) = mean_se(&ms[k]);
        rows.push(
            MetricRow::new(label, "mse_low_rank", m, s)
                .check(wins[k] * 2 > seeds)
                .note(&format!("misspecified SURE worse than UNSURE in {}/{seeds} seeds (majority)", wins[k])),
        );
    }
    Ok(rows)
}

fn nullspace(scale: Scale, seed: u64) -> Result<Vec<MetricRow>> {
    let cfg = match scale {
        Scale::Smoke => NullspaceConfig { train_items: 512, test_items: 1000, epochs: 150, ..Default::default() },
        Scale::Full => NullspaceConfig::default(),
    };
    let res = nullspace_experiment(&cfg, seed)?;
    let mut rows = vec![MetricRow::new("posterior_mean", "null_mse", res.oracle, 0.0).note("Bayes oracle")];
    for r in &res.rows {
        let row = MetricRow::new(&r.method, "null_mse", r.null_mse, r.se);
        rows.push(match r.method.as_str() {
            "mc" => row
                .reference(res.prior_null)
                .check((r.null_mse / res.prior_null - 1.0).abs() <= 0.1)
                .note("consistency alone leaves the nullspace at prior variance (10%)"),
            "ei_equivariant_control" => row
                .reference(2.0 * res.oracle)
                .check(r.null_mse <= 2.0 * res.oracle)
                .expected_fail()
                .note("equivariant operator: invariance cannot reveal the nullspace"),
            _ => row
                .reference(2.0 * res.oracle)
                .check(r.null_mse <= 2.0 * res.oracle)
                .note("nullspace learned from invariance, within 2x oracle"),
        });
    }
    let ctl = res.row("ei_equivariant_control").map(|r| r.null_mse).unwrap_or(f64::NAN);
    rows.push(
        MetricRow::new("ei_equivariant_control", "null_vs_prior", ctl / res.control_prior_null, 0.0)
            .reference(1.0)
            .check((ctl / res.control_prior_null - 1.0).abs() <= 0.1)
            .note("no nullspace improvement for an equivariant operator (10%)"),
    );
    Ok(rows)
}

fn sample_complexity(scale: Scale, seed: u64) -> Result<Vec<MetricRow>> {
    let ns: Vec<usize> = (5..=11).map(|k| 1usize << k).collect();
    let repeats = scale.pick(5, crate::harness::DEFAULT_REPEATS);
    let mmse_samples = scale.pick(50_000, 200_000);
    let sup = gap_experiment(&gmm_gap_config("supervised", ns.clone(), repeats, mmse_samples)?, seed)?;
    let mut rows = vec![MetricRow::new("supervised", "gap_slope", sup.slope, sup.slope_ci / 1.96).note("baseline")];
    for (n, (g, s)) in sup.ns.iter().zip(sup.mean_gap.iter().zip(&sup.se_gap)) {
        rows.push(MetricRow::new("supervised", &format!("gap_n{n}"), *g, *s));
    }
    for loss in ["sure", "n2n"] {
        let r = gap_experiment(&gmm_gap_config(loss, ns.clone(), repeats, mmse_samples)?, seed)?;
        rows.push(
            MetricRow::new(loss, "gap_slope", r.slope, r.slope_ci / 1.96)
                .reference(-0.5)
                .check((-0.8..=-0.2).contains(&r.slope) && r.dropped == 0)
                .note("log-log slope of test MSE - MMSE in [-0.8, -0.2]"),
        );
        let monotone = r.mean_gap.windows(2).all(|w| w[1] <= w[0]);
        rows.push(
            MetricRow::new(loss, "gap_monotone", f64::from(u8::from(monotone)), 0.0)
                .check(monotone)
                .note("gap decreases with N"),
        );
        let below = sup
            .mean_gap
            .iter()
            .zip(&sup.se_gap)
            .zip(r.mean_gap.iter().zip(&r.se_gap))
            .all(|((g0, s0), (g1, s1))| *g0 <= g1 + 2.0 * (s0 + s1));
        let row = MetricRow::new(loss, "above_supervised", f64::from(u8::from(below)), 0.0).check(below);
        rows.push(if loss == "sure" {
            row.expected_fail()
                .note("known-sigma SURE uses the exact noise cross term, so it can beat supervised training at finite N")
        } else {
            row.note("supervised gap <= self-supervised gap at every N (2 SE)")
        });
        for (n, (g, s)) in r.ns.iter().zip(r.mean_gap.iter().zip(&r.se_gap)) {
            rows.push(MetricRow::new(loss, &format!("gap_n{n}"), *g, *s));
        }
    }
    Ok(rows)
}

fn variance(scale: Scale, seed: u64) -> Result<Vec<MetricRow>> {
    let n = 4;
    let noise = NoiseModel::GaussianIso { sigma: 0.5 };
    let prior = two_component(n, 1.0, 0.5)?;
    let est = fixed_affine(n, seed)?;
    let v = variance_probe(&est, &prior, &noise, scale.pick(100_000, 400_000), &RngStream::new(seed, 0))?;
    let g = gradient_variance_probe(&est, &prior, &noise, scale.pick(50_000, 200_000), &RngStream::new(seed, 1))?;
    Ok(vec![
        MetricRow::new("n2n_vs_supervised", "loss_var_gap", v.delta, v.delta_se)
            .reference(v.delta_gaussian)
            .check((v.delta - v.delta_gaussian).abs() <= 3.0 * v.delta_se)
            .note("2 sigma^4/n + 4 sigma^2 MSE/n (Gaussian fourth moment), 3 SE"),
        MetricRow::new("n2n_vs_supervised", "loss_var_gap_3s4", v.delta, v.delta_se)
            .reference(v.delta_stated)
            .check((v.delta - v.delta_stated).abs() <= 3.0 * v.delta_se)
            .expected_fail()
            .note("3 sigma^4/n + 4 sigma^2 MSE/n overstates the Gaussian fourth moment"),
        MetricRow::new("n2n_vs_supervised", "grad_var_gap", g.gap, g.gap_se)
            .reference(g.additional_term)
            .check((g.gap - g.additional_term).abs() <= 3.0 * g.gap_se)
            .note("sigma^2 E||(1/n) df/dtheta||_F^2, 3 SE"),
    ])
}

fn equivalences(scale: Scale, seed: u64) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();

    let (n, sigma, alpha) = (4, 0.5, 1e-3);
    let noise = NoiseModel::GaussianIso { sigma };
    let tb = Testbed::denoising(two_component(n, 1.0, 0.5)?, noise.clone())?;
    let batch = tb.batch(scale.pick(20_000, 100_000), &RngStream::new(seed, 1))?;
    let r2r = Loss::R2r { noise: noise.clone(), alpha, resamples: 1, metric: Metric::L2 };
    let sure = Loss::Sure { noise, backend: TraceBackend::Analytic };
    let d = loss_difference(&r2r, &sure, sigma * sigma / alpha, &batch, &fixed_affine(n, seed)?, &RngStream::new(seed, 2))?;
    rows.push(
        MetricRow::new("r2r_alpha_1e-3", "minus_sure", d.gap, d.se)
            .reference(0.0)
            .check(d.within(3.0))
            .note("R2R tends to SURE as alpha -> 0, 3 SE"),
    );

    let (h, w) = (3, 4);
    let group = GroupAction::circular_shifts(h, w);
    let base = Estimator::mlp(&[h * w, 10, h * w], &mut RngStream::new(seed, 8))?;
    let est = Estimator::reynolds(base, group.clone())?;
    let op = LinearOperator::diagonal_mask((0..h * w).map(|i| i % 5 != 2).collect()).with_shape(h, w)?;
    let tb = Testbed::new(two_component(h * w, 1.0, 0.3)?, NoiseModel::GaussianIso { sigma: 0.2 }, fixed_operator(op)?)?;
    let batch = tb.batch(50, &RngStream::new(seed, 9))?;
    let split = SplitDistribution::uniform(0.6, h * w);
    let rng = RngStream::new(seed, 10);
    let m = evaluate(&Loss::Msplit { split: split.clone(), variant: MsplitVariant::Plain }, &batch, &est, &rng, false)?;
    let e = evaluate(&Loss::Esplit { group, split, all_elements: true }, &batch, &est, &rng, false)?;
    let diff = (e.value - m.value).abs();
    rows.push(
        MetricRow::new("esplit_reynolds", "minus_msplit", diff, 0.0)
            .reference(0.0)
            .check(diff <= 1e-10)
            .note("equivariant reconstructor: ESPLIT equals MSPLIT exactly (1e-10)"),
    );

    let chk = noisier2noise_equivalence(&single_gaussian(4, 1.0)?, 0.5, 1.0, scale.pick(50_000, 200_000), seed)?;
    rows.push(
        MetricRow::new("noisier2noise_corrected", "vs_r2r", chk.gap_r2r, 0.0)
            .reference(0.0)
            .check(chk.gap_r2r <= 2e-2)
            .note("corrected Noisier2Noise map equals the R2R map (2e-2)"),
    );
    rows.push(
        MetricRow::new("noisier2noise_corrected", "vs_posterior_mean", chk.gap_oracle, 0.0)
            .reference(0.0)
            .check(chk.gap_oracle <= 1e-2)
            .note("and the posterior mean given y1 (1e-2)"),
    );
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_parameter_error() {
        assert!(matches!(run_suite("nope", Scale::Smoke, 0), Err(Error::Parameter { .. })));
        assert!("medium".parse::<Scale>().is_err());
    }
}
