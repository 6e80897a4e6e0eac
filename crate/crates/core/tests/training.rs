use selfsup::config::{run_experiment, ExperimentConfig};
use selfsup::harness::{low_rank_gaussian, single_gaussian, train, Testbed, TrainConfig, TrainData};
use selfsup::{Batch, Constraint, Estimator, Loss, NoiseModel, Prior, RealMatrix, RngStream, TraceBackend};

fn fit(loss: &Loss, tb: &Testbed, items: usize, constraint: Constraint, seed: u64) -> (RealMatrix, Vec<f64>) {
    let data = TrainData { train: tb.batch(items, &RngStream::new(seed, 0)).unwrap(), val: Batch::default(), test: None };
    let est = Estimator::affine_zeros(tb.n(), constraint).unwrap();
    match train(loss, est, &data, &TrainConfig::exact(seed)).unwrap().est {
        Estimator::Affine(a) => (a.w, a.b.iter().cloned().collect()),
        _ => unreachable!(),
    }
}

fn max_err(w: &RealMatrix, b: &[f64], want: &RealMatrix) -> f64 {
    (w - want).amax().max(b.iter().fold(0.0, |m, v| m.max(v.abs())))
}

#[test]
fn noise2noise_minimiser_is_the_wiener_map() {
    let tb = Testbed::denoising(single_gaussian(2, 1.0).unwrap(), NoiseModel::GaussianIso { sigma: 1.0 }).unwrap().with_pairs();
    let (w, b) = fit(&Loss::Noise2Noise, &tb, 200_000, Constraint::None, 1);
    let err = max_err(&w, &b, &(RealMatrix::identity(2, 2) * 0.5));
    assert!(err <= 1e-2, "parameter error {err}");
}

#[test]
fn sure_and_supervised_minimisers_halve_the_input() {
    let noise = NoiseModel::GaussianIso { sigma: 1.0 };
    let tb = Testbed::denoising(single_gaussian(2, 1.0).unwrap(), noise.clone()).unwrap();
    let half = RealMatrix::identity(2, 2) * 0.5;
    for loss in [Loss::Supervised, Loss::Sure { noise, backend: TraceBackend::Analytic }] {
        let (w, b) = fit(&loss, &tb, 100_000, Constraint::None, 2);
        let err = max_err(&w, &b, &half);
        assert!(err <= 1e-2, "{}: parameter error {err}", loss.name());
    }
}

#[test]
fn gsure_minimiser_targets_the_natural_parameter() {
    // E[x / sigma^2 | y] for a conjugate prior
    let sigma: f64 = 0.8;
    let noise = NoiseModel::GaussianIso { sigma };
    let tb = Testbed::denoising(single_gaussian(2, 1.0).unwrap(), noise.clone()).unwrap();
    let (w, b) = fit(&Loss::Gsure { noise, backend: TraceBackend::Analytic }, &tb, 200_000, Constraint::None, 3);
    let s2 = sigma * sigma;
    let want = RealMatrix::identity(2, 2) * (1.0 / (1.0 + s2) / s2);
    let err = max_err(&w, &b, &want);
    assert!(err <= 1e-2, "parameter error {err}");
}

#[test]
fn blind_spot_fit_predicts_each_pixel_from_the_others() {
    let sigma = 0.5;
    let prior = low_rank_gaussian(3, 1, 4.0, 0.5, 9).unwrap();
    let Prior::Gmm(g) = &prior else { unreachable!() };
    let cy = &g.covs[0] + RealMatrix::identity(3, 3) * (sigma * sigma);
    let tb = Testbed::denoising(prior.clone(), NoiseModel::GaussianIso { sigma }).unwrap();
    let (w, b) = fit(&Loss::Mc, &tb, 200_000, Constraint::ZeroDiagonal, 4);
    let mut want = RealMatrix::zeros(3, 3);
    for i in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
        let c_oo = cy.select_rows(others.iter()).select_columns(others.iter());
        let c_io = cy.select_rows([i].iter()).select_columns(others.iter());
        let row = c_io * c_oo.try_inverse().unwrap();
        for (k, &j) in others.iter().enumerate() {
            want[(i, j)] = row[(0, k)];
        }
    }
    let err = max_err(&w, &b, &want);
    assert!(err <= 1e-2, "parameter error {err}");
    assert!((0..3).all(|i| w[(i, i)] == 0.0));
}

const CONFIG: &str = r#"{
    "name": "inpaint",
    "seed": 3,
    "prior": {"kind": "two_component", "n": 4, "mu": 1.0, "variance": 0.5},
    "operators": {"kind": "bernoulli_mask", "p": [0.8, 0.8, 0.8, 0.8]},
    "noise": {"kind": "gaussian_iso", "sigma": 0.3},
    "estimator": {"kind": "affine"},
    "loss": {"kind": "msplit", "split": {"q": [0.5]}},
    "train": {"optimizer": {"kind": "exact_quadratic"}, "epochs": 1},
    "data": {"items": 400, "test_items": 200}
}"#;

#[test]
fn config_round_trips_through_canonical_json() {
    let c = ExperimentConfig::from_json(CONFIG).unwrap();
    let again = ExperimentConfig::from_json(&c.canonical_json().unwrap()).unwrap();
    assert_eq!(c, again);
    assert_eq!(c.canonical_json().unwrap(), again.canonical_json().unwrap());
    assert_eq!(c.stem(), "inpaint-s3");
}

#[test]
fn experiments_are_deterministic() {
    let c = ExperimentConfig::from_json(CONFIG).unwrap();
    let (_, a) = run_experiment(&c).unwrap();
    let (_, b) = run_experiment(&c).unwrap();
    assert_eq!(a.test_mse, b.test_mse);
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.config_hash, b.config_hash);
    let mmse = a.mmse.unwrap();
    assert!(a.test_mse.unwrap() >= mmse);
}
