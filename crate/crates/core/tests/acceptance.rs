//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line.

use std::sync::Arc;
use std::time::Instant;

use selfsup::harness::*;
use selfsup::linalg::{mean_se, RealMatrix, RealVector};
use selfsup::losses::{item_values, Batch, Loss, Metric};
use selfsup::noise::zero_outside;
use selfsup::{Constraint, Estimator, LinearOperator, NoiseModel, RngStream, TraceBackend};

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {id:>2} {:<4} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn fixed_affine(n: usize, seed: u64) -> Estimator {
    let mut r = RngStream::new(seed, 99);
    let w = RealMatrix::identity(n, n) * 0.6 + RealMatrix::from_fn(n, n, |_, _| 0.1 * r.normal());
    let b = RealVector::from_fn(n, |_, _| 0.2 * r.normal());
    Estimator::affine(w, b, Constraint::None).unwrap()
}

struct Unbiased {
    name: &'static str,
    n: usize,
    gap: f64,
    se: f64,
    secs: f64,
}

/// `mean(L_self - L_sup - c(x))` over paired items.
fn unbiased_gap(name: &'static str, loss: &Loss, tb: &Testbed, n: usize, items: usize, seed: u64) -> Unbiased {
    let t0 = Instant::now();
    let est = fixed_affine(n, seed);
    let rng = RngStream::new(seed, 5);
    let batch = tb.batch(items, &RngStream::new(seed, 6)).unwrap();
    let selfv = item_values(loss, &batch, &est, &rng).unwrap();
    let nf = n as f64;
    let d: Vec<f64> = batch
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let x = it.x.as_ref().unwrap();
            let input = match loss {
                Loss::R2r { noise, alpha, .. } => {
                    let (y1, _) = noise.gr2r_pair(&it.y, *alpha, &mut rng.derive(i as u64)).unwrap();
                    zero_outside(&y1, &it.op.row_support())
                }
                _ => it.y.clone(),
            };
            let sup = (est.forward(&input, &it.op).unwrap() - x).norm_squared() / nf;
            let c = match loss {
                Loss::Noise2Noise => match &tb.noise {
                    NoiseModel::GaussianIso { sigma } => sigma * sigma,
                    _ => unreachable!(),
                },
                Loss::R2r { noise, alpha, .. } => match noise {
                    NoiseModel::GaussianIso { sigma } => sigma * sigma / alpha,
                    NoiseModel::Poisson { gamma } => gamma * x.mean() / alpha,
                    NoiseModel::Gamma { l } => x.map(|v| v * v).mean() / (l * alpha),
                    _ => unreachable!(),
                },
                Loss::Pure { gamma, .. } => gamma * x.mean(),
                _ => 0.0,
            };
            selfv[i] - sup - c
        })
        .collect();
    let (gap, se) = mean_se(&d);
    Unbiased { name, n, gap, se, secs: t0.elapsed().as_secs_f64() }
}

#[test]
fn c01_unbiasedness() {
    let items = 100_000;
    let sigma = 0.5;
    let mut rows = Vec::new();
    for (k, &n) in [1usize, 4, 16].iter().enumerate() {
        let seed = 100 + k as u64;
        let g = NoiseModel::GaussianIso { sigma };
        let gauss = Testbed::denoising(two_component(n, 1.0, 0.5).unwrap(), g.clone()).unwrap();
        let paired = gauss.clone().with_pairs();
        let pois = NoiseModel::Poisson { gamma: 0.5 };
        let gam = NoiseModel::Gamma { l: 10.0 };
        let ptb = Testbed::denoising(positive_two_component(n).unwrap(), pois.clone()).unwrap();
        let gtb = Testbed::denoising(positive_two_component(n).unwrap(), gam.clone()).unwrap();
        let r2r = |noise: &NoiseModel| Loss::R2r { noise: noise.clone(), alpha: 0.5, resamples: 1, metric: Metric::L2 };
        rows.push(unbiased_gap("n2n", &Loss::Noise2Noise, &paired, n, items, seed));
        rows.push(unbiased_gap("r2r_gauss", &r2r(&g), &gauss, n, items, seed));
        rows.push(unbiased_gap("gr2r_poisson", &r2r(&pois), &ptb, n, items, seed));
        rows.push(unbiased_gap("gr2r_gamma", &r2r(&gam), &gtb, n, items, seed));
        for (name, backend) in [
            ("sure_analytic", TraceBackend::Analytic),
            ("sure_hutchinson", TraceBackend::Hutchinson { probes: 1 }),
            ("sure_ramani", TraceBackend::Ramani { tau: 1e-3, probes: 1 }),
        ] {
            rows.push(unbiased_gap(name, &Loss::Sure { noise: g.clone(), backend }, &gauss, n, items, seed));
        }
        let pure = Loss::Pure { gamma: 0.5, backend: selfsup::losses::PureBackend::ExactShift { sign: Default::default() } };
        rows.push(unbiased_gap("pure", &pure, &ptb, n, items, seed));
    }
    let mut all = true;
    for r in &rows {
        let ok = r.gap.abs() <= 3.0 * r.se && r.secs <= 60.0;
        all &= ok;
        println!("  {:<16} n={:<2} gap={:+.3e} se={:.3e} {:.1}s {}", r.name, r.n, r.gap, r.se, r.secs, if ok { "ok" } else { "FAIL" });
    }
    report(1, "unbiasedness", all, &format!("{} loss/size rows within 3 SE", rows.len()));
    assert!(all);
}

fn affine_of(e: &Estimator) -> &selfsup::estimators::Affine {
    match e {
        Estimator::Affine(a) => a,
        _ => panic!("expected an affine estimator"),
    }
}

fn train_exact(loss: &Loss, tb: &Testbed, items: usize, seed: u64) -> TrainOutcome {
    let all = tb.batch(items, &RngStream::new(seed, 20)).unwrap();
    let data = TrainData { train: all, val: Batch::default(), test: None };
    let est = Estimator::affine_zeros(tb.n(), Constraint::None).unwrap();
    train(loss, est, &data, &TrainConfig::exact(seed)).unwrap()
}

#[test]
fn c02_sure_recovers_posterior_mean() {
    let (s0, sigma) = (1.0, 1.0);
    let noise = NoiseModel::GaussianIso { sigma };
    let prior = single_gaussian(1, s0).unwrap();
    let tb = Testbed::denoising(prior.clone(), noise.clone()).unwrap();
    let sure = Loss::Sure { noise: noise.clone(), backend: TraceBackend::Analytic };
    let out = train_exact(&sure, &tb, 200_000, 2);
    let a = affine_of(&out.est);
    let target = s0 * s0 / (s0 * s0 + sigma * sigma);
    let err = (a.w[(0, 0)] - target).abs().max(a.b[0].abs());
    let mmse = sigma * sigma * s0 * s0 / (s0 * s0 + sigma * sigma);
    let mse = affine_denoising_mse(a, &prior.mean(), &prior.covariance(), &noise.covariance(1).unwrap());
    let sup = affine_of(&train_exact(&Loss::Supervised, &tb, 200_000, 2).est).clone();
    let err_sup = (sup.w[(0, 0)] - target).abs().max(sup.b[0].abs());
    let ok = err <= 1e-2 && (mse / mmse - 1.0).abs() <= 0.02 && err_sup <= 1e-2;
    report(2, "sure minimizer", ok, &format!("param err {err:.2e} (supervised {err_sup:.2e}), mse/mmse {:.4}", mse / mmse));
    assert!(ok);
}

#[test]
fn c03_unsure_matches_zed() {
    let noise = NoiseModel::GaussianIso { sigma: 1.0 };
    let prior = single_gaussian(1, 1.0).unwrap();
    let tb = Testbed::denoising(prior.clone(), noise.clone()).unwrap();
    let unsure = Loss::Unsure { basis: selfsup::losses::CovBasis::Scalar, eta: vec![0.0], backend: TraceBackend::Analytic };
    let out = train_exact(&unsure, &tb, 200_000, 3);
    let a = affine_of(&out.est);
    let mse = affine_denoising_mse(a, &prior.mean(), &prior.covariance(), &noise.covariance(1).unwrap());
    let target = selfsup::priors::zed_gap(0.5, 1.0).unwrap();
    let ok_zed = (mse / target - 1.0).abs() <= 0.05;
    println!("  zed: mse {mse:.4} target {target:.4} multiplier {:.4}", multipliers(&out.loss)[0]);

    // misspecified noise level on an anisotropic low-rank testbed
    let n = 16;
    let lr = low_rank_gaussian(n, 4, 10.0, 0.01, 17).unwrap();
    let tb = Testbed::denoising(lr.clone(), noise.clone()).unwrap();
    let (mean, cov, ncov) = (lr.mean(), lr.covariance(), noise.covariance(n).unwrap());
    let mut wins = [0usize; 2];
    let seeds = 15;
    let mut means = [0.0; 3];
    for s in 0..seeds {
        let seed = 300 + s;
        let u = train_exact(&unsure, &tb, 2000, seed);
        let mu = affine_denoising_mse(affine_of(&u.est), &mean, &cov, &ncov);
        means[0] += mu / seeds as f64;
        for (k, f) in [0.5, 1.5].iter().enumerate() {
            let sure = Loss::Sure { noise: NoiseModel::GaussianIso { sigma: *f }, backend: TraceBackend::Analytic };
            let o = train_exact(&sure, &tb, 2000, seed);
            let ms = affine_denoising_mse(affine_of(&o.est), &mean, &cov, &ncov);
            means[k + 1] += ms / seeds as f64;
            if ms > mu {
                wins[k] += 1;
            }
        }
    }
    let ok_mis = wins.iter().all(|w| *w * 2 > seeds as usize);
    let ok = ok_zed && ok_mis;
    report(
        3,
        "unsure / zed",
        ok,
        &format!(
            "zed mse {mse:.4} vs {target:.4}; unsure {:.4}, sure(0.5 sigma) {:.4} wins {}/15, sure(1.5 sigma) {:.4} wins {}/15",
            means[0], means[1], wins[0], means[2], wins[1]
        ),
    );
    assert!(ok);
}

#[test]
fn c10_holdout_proxy() {
    let seeds: Vec<u64> = (0..DEFAULT_REPEATS as u64).collect();
    let runs = holdout_experiment(&HoldoutConfig::default(), &seeds).unwrap();
    let worst = runs.iter().map(|r| r.excess()).fold(0.0, f64::max);
    let overfit = runs.iter().map(|r| r.last_mse / r.best_mse).sum::<f64>() / runs.len() as f64;
    let ok = runs.len() == seeds.len() && worst <= 0.05;
    report(
        10,
        "hold-out proxy",
        ok,
        &format!("worst excess {:.1}% over {} seeds (last epoch {overfit:.2}x best)", 100.0 * worst, runs.len()),
    );
    assert!(ok);
}

#[test]
fn c11_gap_trend() {
    let t0 = Instant::now();
    let ns: Vec<usize> = (5..=11).map(|k| 1usize << k).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for loss in ["sure", "n2n"] {
        let cfg = gmm_gap_config(loss, ns.clone(), DEFAULT_REPEATS, 200_000).unwrap();
        let r = gap_experiment(&cfg, 11).unwrap();
        ok &= (-0.8..=-0.2).contains(&r.slope) && r.dropped == 0;
        parts.push(format!("{loss} slope {:.3} +/- {:.3}", r.slope, r.slope_ci));
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs <= 900.0;
    report(11, "gap(N) trend", ok, &format!("{}, {secs:.0}s", parts.join(", ")));
    assert!(ok);
}

#[test]
fn c12_noisier2noise_equivalence() {
    let prior = single_gaussian(4, 1.0).unwrap();
    let chk = noisier2noise_equivalence(&prior, 0.5, 1.0, 200_000, 12).unwrap();
    let ok = chk.gap_r2r <= 2e-2 && chk.gap_oracle <= 1e-2;
    report(12, "noisier2noise", ok, &format!("vs r2r {:.2e}, vs oracle {:.2e}", chk.gap_r2r, chk.gap_oracle));
    assert!(ok);
}

#[test]
fn c04_gr2r_structure() {
    let models = [
        (NoiseModel::GaussianIso { sigma: 0.7 }, RealVector::from_vec(vec![0.5, -1.0, 2.0])),
        (NoiseModel::Poisson { gamma: 0.5 }, RealVector::from_vec(vec![2.0, 5.0, 9.0])),
        (NoiseModel::Gamma { l: 5.0 }, RealVector::from_vec(vec![1.0, 3.0, 6.0])),
    ];
    let mut all = true;
    for (k, (noise, x)) in models.iter().enumerate() {
        for alpha in [0.1, 0.5] {
            let mut rng = RngStream::new(40 + k as u64, (alpha * 10.0) as u64);
            let c = selfsup::noise::snr_split_check(noise, x, alpha, 200_000, &mut rng).unwrap();
            let indep = c.cross_covariance.iter().all(|v| v.within(3.0));
            let ratios = c.var_y1.iter().chain(&c.var_y2).all(|v| v.within(3.0));
            let snr = (c.snr_ratio - (1.0 - alpha)).abs() <= 0.02;
            let ok = indep && ratios && snr;
            all &= ok;
            println!("  {:<14} alpha={alpha}: independence {indep}, variance ratios {ratios}, snr ratio {:.4}", noise.name(), c.snr_ratio);
        }
    }
    report(4, "gr2r structure", all, "3 families x 2 levels");
    assert!(all);
}

#[test]
fn c05_r2r_sure_limit() {
    let n = 4;
    let sigma = 0.5;
    let alpha = 1e-3;
    let noise = NoiseModel::GaussianIso { sigma };
    let tb = Testbed::denoising(two_component(n, 1.0, 0.5).unwrap(), noise.clone()).unwrap();
    let est = fixed_affine(n, 5);
    let batch = tb.batch(100_000, &RngStream::new(5, 1)).unwrap();
    let r2r = Loss::R2r { noise: noise.clone(), alpha, resamples: 1, metric: Metric::L2 };
    let sure = Loss::Sure { noise, backend: TraceBackend::Analytic };
    let a = item_values(&r2r, &batch, &est, &RngStream::new(5, 2)).unwrap();
    let b = item_values(&sure, &batch, &est, &RngStream::new(5, 3)).unwrap();
    let d: Vec<f64> = a.iter().zip(&b).map(|(r, s)| r - sigma * sigma / alpha - s).collect();
    let (gap, se) = mean_se(&d);
    let ok = gap.abs() <= 3.0 * se;
    report(5, "r2r -> sure limit", ok, &format!("L_R2R - sigma^2/alpha - L_SURE = {gap:+.3e} (se {se:.3e})"));
    assert!(ok);
}

#[test]
fn c06_splitting_minimizer() {
    use selfsup::losses::{MsplitVariant, SplitDistribution};
    use selfsup::AtomPrior;
    let (n, p, q) = (3usize, 0.8, 0.5);
    let atoms = vec![
        RealVector::zeros(n),
        RealVector::from_vec(vec![1.0, 0.0, 0.0]),
        RealVector::from_vec(vec![0.0, 1.0, 0.0]),
        RealVector::from_vec(vec![0.0, 0.0, 1.0]),
    ];
    let prior = AtomPrior::uniform(atoms.clone()).unwrap();
    let bits = |k: usize| -> Vec<bool> { (0..n).map(|i| k >> i & 1 == 1).collect() };
    let prob = |b: &[bool], p: f64| b.iter().map(|v| if *v { p } else { 1.0 - p }).product::<f64>();
    let split = SplitDistribution::uniform(q, n).with_mask_prior(vec![p; n]);

    // Q_{A1} against exhaustive enumeration of (b, w)
    let mut q_err: f64 = 0.0;
    for k1 in 0..8 {
        let b1 = bits(k1);
        let (mut num, mut den) = (vec![0.0; n], 0.0);
        for kb in 0..8 {
            for kw in 0..8 {
                let (b, w) = (bits(kb), bits(kw));
                if (0..n).any(|i| (b[i] && w[i]) != b1[i]) {
                    continue;
                }
                let pr = prob(&b, p) * prob(&w, q);
                den += pr;
                for i in 0..n {
                    num[i] += pr * if b[i] { 1.0 } else { 0.0 };
                }
            }
        }
        let got = split.q_diagonal(&LinearOperator::diagonal_mask(b1.clone())).unwrap();
        for i in 0..n {
            q_err = q_err.max((got[i] - num[i] / den).abs());
        }
    }

    // exact expected MSPLIT loss as a weighted enumeration of (x, b, w)
    let noise = NoiseModel::GaussianIso { sigma: 0.0 };
    let mut items = Vec::new();
    for x in &atoms {
        for kb in 0..8 {
            let op = Arc::new(LinearOperator::diagonal_mask(bits(kb)));
            let y = op.apply(x).unwrap();
            for kw in 0..8 {
                let w = prob(&bits(kb), p) * prob(&bits(kw), q) / atoms.len() as f64;
                items.push(selfsup::losses::Item::new(y.clone(), op.clone()).with_x(x.clone()).with_split(bits(kw)).with_weight(w));
            }
        }
    }
    let keys: Vec<LinearOperator> = (0..8).map(|k| LinearOperator::diagonal_mask(bits(k))).collect();
    let est = Estimator::per_operator(keys.clone(), n).unwrap();
    let data = TrainData { train: Batch::new(items), val: Batch::default(), test: None };
    let loss = Loss::Msplit { split, variant: MsplitVariant::Plain };
    let out = train(&loss, est, &data, &TrainConfig::exact(6)).unwrap();

    // oracle: E[x | y1, A1] by brute force, interpolated affinely on the support of y1
    let mut p_err: f64 = 0.0;
    for (k, a1) in keys.iter().enumerate() {
        let b1 = bits(k);
        let obs: Vec<usize> = (0..n).filter(|&i| b1[i]).collect();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for x in &atoms {
            let y1 = a1.apply(x).unwrap();
            let pm = prior.posterior_mean(&noise, a1, &y1).unwrap();
            let mut r: Vec<f64> = obs.iter().map(|&i| y1[i]).collect();
            r.push(1.0);
            rows.push(r);
            targets.push(pm);
        }
        let d = RealMatrix::from_row_iterator(rows.len(), obs.len() + 1, rows.iter().flatten().cloned());
        let t = RealMatrix::from_fn(targets.len(), n, |r, c| targets[r][c]);
        let coef = selfsup::linalg::pinv(&d, 1e-12) * t;
        let learned = out.est.jacobian(&RealVector::zeros(n), a1).unwrap();
        let bias = out.est.forward(&RealVector::zeros(n), a1).unwrap();
        for (j, &i) in obs.iter().enumerate() {
            for r in 0..n {
                p_err = p_err.max((learned[(r, i)] - coef[(j, r)]).abs());
            }
        }
        for r in 0..n {
            p_err = p_err.max((bias[r] - coef[(obs.len(), r)]).abs());
        }
    }
    let ok = q_err <= 1e-12 && p_err <= 1e-2;
    report(6, "splitting minimizer", ok, &format!("Q_A1 err {q_err:.1e}, parameter err vs E[x|y1,A1] {p_err:.2e}"));
    assert!(ok);
}

#[test]
fn c07_nullspace_learning() {
    let res = nullspace_experiment(&NullspaceConfig::default(), 7).unwrap();
    let get = |m: &str| res.row(m).unwrap().null_mse;
    let (mc, ei, es, ctl) = (get("mc"), get("ei"), get("esplit"), get("ei_equivariant_control"));
    let mc_ok = (mc / res.prior_null - 1.0).abs() <= 0.1;
    let ctl_ok = (ctl / res.control_prior_null - 1.0).abs() <= 0.1;
    let ok = ei <= 2.0 * res.oracle && es <= 2.0 * res.oracle && mc_ok && ctl_ok;
    report(
        7,
        "nullspace learning",
        ok,
        &format!(
            "oracle {:.4}, ei {:.2}x, esplit {:.2}x, mc {:.3} of prior, equivariant control {:.3} of prior",
            res.oracle,
            ei / res.oracle,
            es / res.oracle,
            mc / res.prior_null,
            ctl / res.control_prior_null
        ),
    );
    assert!(ok);
}

#[test]
fn c08_esplit_equals_msplit() {
    use selfsup::losses::{MsplitVariant, SplitDistribution};
    use selfsup::GroupAction;
    let (h, w) = (3, 4);
    let n = h * w;
    let group = GroupAction::circular_shifts(h, w);
    let mut r = RngStream::new(8, 0);
    let base = Estimator::mlp(&[n, 10, n], &mut r).unwrap();
    let est = Estimator::reynolds(base, group.clone()).unwrap();
    let mask: Vec<bool> = (0..n).map(|i| i % 5 != 2).collect();
    let op = LinearOperator::diagonal_mask(mask).with_shape(h, w).unwrap();
    let prior = two_component(n, 1.0, 0.3).unwrap();
    let tb = Testbed::new(prior, NoiseModel::GaussianIso { sigma: 0.2 }, fixed_operator(op).unwrap()).unwrap();
    let batch = tb.batch(50, &RngStream::new(8, 1)).unwrap();
    let split = SplitDistribution::uniform(0.6, n);
    let rng = RngStream::new(8, 2);
    let m = selfsup::evaluate(&Loss::Msplit { split: split.clone(), variant: MsplitVariant::Plain }, &batch, &est, &rng, false).unwrap();
    let mut worst: f64 = 0.0;
    for all_elements in [false, true] {
        let e = selfsup::evaluate(&Loss::Esplit { group: group.clone(), split: split.clone(), all_elements }, &batch, &est, &rng, false).unwrap();
        worst = worst.max((e.value - m.value).abs());
    }
    let ok = worst <= 1e-10;
    report(8, "esplit = msplit", ok, &format!("max |L_ESPLIT - L_MSPLIT| = {worst:.1e}"));
    assert!(ok);
}

// The stated loss-variance gap uses 3 sigma^4 / n, but for Gaussian noise the
// fourth-moment term is 2 sigma^4 / n and the measurement follows that. The
// stated check is kept as is and expected to fail.
#[test]
#[should_panic(expected = "stated loss-variance gap")]
fn c09_variance_decompositions() {
    let n = 4;
    let sigma = 0.5;
    let noise = NoiseModel::GaussianIso { sigma };
    let prior = two_component(n, 1.0, 0.5).unwrap();
    let est = fixed_affine(n, 9);
    let v = variance_probe(&est, &prior, &noise, 400_000, &RngStream::new(9, 0)).unwrap();
    let loss_ok = (v.delta - v.delta_stated).abs() <= 3.0 * v.delta_se;
    let gauss_ok = (v.delta - v.delta_gaussian).abs() <= 3.0 * v.delta_se;
    println!(
        "  loss: measured {:.5} (se {:.5}), stated {:.5}, gaussian fourth moment {:.5}",
        v.delta, v.delta_se, v.delta_stated, v.delta_gaussian
    );
    let g = gradient_variance_probe(&est, &prior, &noise, 200_000, &RngStream::new(9, 1)).unwrap();
    let grad_ok = (g.gap - g.additional_term).abs() <= 3.0 * g.gap_se;
    println!("  gradient: measured {:.5} (se {:.5}), predicted {:.5}", g.gap, g.gap_se, g.additional_term);
    report(
        9,
        "variance decompositions",
        loss_ok && grad_ok,
        &format!("loss-variance gap vs 3s^4/n + 4s^2 MSE/n: {loss_ok} (vs 2s^4/n: {gauss_ok}); gradient-variance gap: {grad_ok}"),
    );
    assert!(grad_ok, "gradient-variance gap mismatch");
    assert!(gauss_ok, "loss-variance gap differs from the gaussian fourth moment");
    assert!(loss_ok, "stated loss-variance gap not reproduced");
}

#[test]
fn c13_gradient_fidelity() {
    use selfsup::estimators::grad_check;
    let n = 8;
    let mut r = RngStream::new(13, 0);
    let ops = vec![
        LinearOperator::identity(n),
        LinearOperator::diagonal_mask((0..n).map(|i| i % 3 != 0).collect()),
        LinearOperator::masked_dft((0..n).map(|i| i % 2 == 0 || i == 1 || i == n - 1).collect()),
        LinearOperator::subsampled_conv(vec![0.5, 0.3, 0.2], 2, n).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for op in &ops {
        let ests = vec![
            Estimator::mlp(&[n, 12, 12, n], &mut r).unwrap(),
            fixed_affine(n, 13),
            Estimator::affine(
                RealMatrix::from_fn(n, n, |_, _| r.normal()),
                RealVector::from_fn(n, |_, _| r.normal()),
                Constraint::ZeroDiagonal,
            )
            .unwrap(),
        ];
        for est in &ests {
            let y = op.apply(&RealVector::from_vec(r.normal_vec(n))).unwrap();
            worst = worst.max(grad_check(est, &y, op, 4, &mut r).unwrap());
        }
    }
    let blind = Estimator::affine(
        RealMatrix::from_fn(n, n, |_, _| r.normal()),
        RealVector::zeros(n),
        Constraint::ZeroDiagonal,
    )
    .unwrap();
    let id = LinearOperator::identity(n);
    let j = blind.jacobian(&RealVector::from_vec(r.normal_vec(n)), &id).unwrap();
    let diag_zero = (0..n).all(|i| j[(i, i)] == 0.0);
    let ok = worst <= 1e-5 && diag_zero;
    report(13, "gradient fidelity", ok, &format!("max relative fd error {worst:.1e}, blind-spot diagonal exactly 0: {diag_zero}"));
    assert!(ok);
}
