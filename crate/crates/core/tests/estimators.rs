use selfsup::estimators::{grad_check, jacobian_trace, Lifted};
use selfsup::operators::GroupAction;
use selfsup::{Constraint, Estimator, LinearOperator, RealMatrix, RealVector, RngStream, TraceBackend};

fn random_affine(n: usize, rng: &mut RngStream) -> Estimator {
    let w = RealMatrix::from_fn(n, n, |_, _| rng.normal());
    let b = RealVector::from_vec(rng.normal_vec(n));
    Estimator::affine(w, b, Constraint::None).unwrap()
}

#[test]
fn mlp_derivatives_match_finite_differences() {
    let mut rng = RngStream::new(11, 0);
    let est = Estimator::mlp(&[4, 6, 5, 4], &mut rng).unwrap();
    let y = RealVector::from_vec(rng.normal_vec(4));
    for op in [
        LinearOperator::identity(4),
        LinearOperator::diagonal_mask(vec![true, false, true, true]),
        LinearOperator::masked_dft(vec![true, true, false, true]),
        LinearOperator::subsampled_conv(vec![0.6, 0.3], 2, 4).unwrap(),
    ] {
        let y = if op.m() == 4 { y.clone() } else { RealVector::from_vec(rng.normal_vec(op.m())) };
        let err = grad_check(&est, &y, &op, 5, &mut rng).unwrap();
        assert!(err <= 1e-5, "relative error {err}");
    }
}

#[test]
fn reynolds_wrapper_derivatives_and_equivariance() {
    let mut rng = RngStream::new(12, 0);
    let base = Estimator::mlp(&[5, 7, 5], &mut rng).unwrap();
    let group = GroupAction::circular_shifts(1, 5);
    let est = Estimator::reynolds(base, group.clone()).unwrap();
    let op = LinearOperator::diagonal_mask(vec![true, false, true, true, false]);
    let y = op.apply(&RealVector::from_vec(rng.normal_vec(5))).unwrap();
    assert!(grad_check(&est, &y, &op, 4, &mut rng).unwrap() <= 1e-5);
    // f(y, A T) = T^{-1} f(y, A)
    for t in &group.elements {
        let at = op.compose_with_transform(t).unwrap();
        let lhs = est.forward(&y, &at).unwrap();
        let rhs = t.apply_inverse(&est.forward(&y, &op).unwrap());
        assert!((lhs - rhs).amax() < 1e-12);
    }
}

#[test]
fn per_operator_table_routes_by_operator() {
    let mut rng = RngStream::new(13, 0);
    let a = LinearOperator::diagonal_mask(vec![true, false, true]);
    let b = LinearOperator::diagonal_mask(vec![false, true, true]);
    let mut est = Estimator::per_operator(vec![a.clone(), b.clone()], 3).unwrap();
    let p: Vec<f64> = rng.normal_vec(est.num_params());
    est.set_params(&p).unwrap();
    let y = RealVector::from_vec(vec![1.0, 0.0, 2.0]);
    assert!(grad_check(&est, &y, &a, 3, &mut rng).unwrap() <= 1e-5);
    let g = est.vjp_params(&y, &a, &RealVector::from_element(3, 1.0)).unwrap();
    assert!(g[12..].iter().all(|v| *v == 0.0));
    assert!(est.forward(&y, &LinearOperator::identity(3)).is_err());
}

#[test]
fn affine_trace_backends_agree() {
    let mut rng = RngStream::new(14, 0);
    let est = random_affine(3, &mut rng);
    let op = LinearOperator::identity(3);
    let g = Lifted::new(&est, &op);
    let y = RealVector::from_vec(rng.normal_vec(3));
    let sigma = RealMatrix::identity(3, 3) * 0.25;
    let (exact, _) = jacobian_trace(&g, &y, &sigma, TraceBackend::Analytic, &mut rng, false).unwrap();
    let want = (sigma.clone() * est.jacobian(&y, &op).unwrap()).trace();
    assert!((exact - want).abs() < 1e-12);
    let (h, _) = jacobian_trace(&g, &y, &sigma, TraceBackend::Hutchinson { probes: 200_000 }, &mut rng, false).unwrap();
    assert!((h - exact).abs() < 0.02 * exact.abs().max(0.1));
}

#[test]
fn unrolled_derivatives_match_finite_differences() {
    let mut rng = RngStream::new(14, 0);
    let mut est = Estimator::unrolled(4, 3, 0.7).unwrap();
    let p: Vec<f64> = est.params().iter().map(|v| v + 0.2 * rng.normal()).collect();
    est.set_params(&p).unwrap();
    for op in [
        LinearOperator::diagonal_mask(vec![true, false, true, true]),
        LinearOperator::subsampled_conv(vec![0.6, 0.3], 2, 4).unwrap(),
    ] {
        let y = RealVector::from_vec(rng.normal_vec(op.m()));
        let err = grad_check(&est, &y, &op, 4, &mut rng).unwrap();
        assert!(err <= 1e-5, "relative error {err}");
    }
}

#[test]
fn unrolled_projection_step_recovers_subspace_signals() {
    // W = projector onto the first two coordinates; the mask sees only one of them
    let mut w = RealMatrix::zeros(3, 3);
    w[(0, 0)] = 0.5;
    w[(0, 1)] = 0.5;
    w[(1, 0)] = 0.5;
    w[(1, 1)] = 0.5;
    let mut est = Estimator::unrolled(3, 1, 1.0).unwrap();
    let mut p = vec![0.0; 12];
    p[..9].copy_from_slice(w.transpose().as_slice());
    est.set_params(&p).unwrap();
    let op = LinearOperator::diagonal_mask(vec![true, false, true]);
    let y = op.apply(&RealVector::from_vec(vec![2.0, 2.0, 0.0])).unwrap();
    let out = est.forward(&y, &op).unwrap();
    assert!((out - RealVector::from_vec(vec![1.0, 1.0, 0.0])).amax() < 1e-12);
}

#[test]
fn forward_examples() {
    let op = LinearOperator::identity(3);
    let y = RealVector::from_vec(vec![0.5, -1.0, 2.0]);
    let id = Estimator::affine(RealMatrix::identity(3, 3), RealVector::zeros(3), Constraint::None).unwrap();
    assert_eq!(id.forward(&y, &op).unwrap(), y);
    let c = RealVector::from_vec(vec![1.0, 2.0, 3.0]);
    let constant = Estimator::affine(RealMatrix::zeros(3, 3), c.clone(), Constraint::None).unwrap();
    assert_eq!(constant.forward(&y, &op).unwrap(), c);
    let mut dead = Estimator::mlp(&[3, 8, 3], &mut RngStream::new(0, 0)).unwrap();
    dead.set_params(&vec![0.0; dead.num_params()]).unwrap();
    assert_eq!(dead.forward(&y, &op).unwrap(), RealVector::zeros(3));
}

#[test]
fn trace_estimators_on_affine_maps() {
    let mut rng = RngStream::new(15, 0);
    let op = LinearOperator::identity(3);
    let sigma = 0.6;
    let cov = RealMatrix::identity(3, 3) * (sigma * sigma);
    let y = RealVector::from_vec(rng.normal_vec(3));
    let id = Estimator::affine(RealMatrix::identity(3, 3), RealVector::zeros(3), Constraint::None).unwrap();
    let (t, _) = jacobian_trace(&Lifted::new(&id, &op), &y, &cov, TraceBackend::Analytic, &mut rng, false).unwrap();
    assert!((t - 3.0 * sigma * sigma).abs() < 1e-12);

    let est = random_affine(3, &mut rng);
    let g = Lifted::new(&est, &op);
    let (exact, _) = jacobian_trace(&g, &y, &cov, TraceBackend::Analytic, &mut rng, false).unwrap();
    let draws: Vec<f64> = (0..10_000)
        .map(|_| jacobian_trace(&g, &y, &cov, TraceBackend::Hutchinson { probes: 1 }, &mut rng, false).unwrap().0)
        .collect();
    let (h, se) = selfsup::linalg::mean_se(&draws);
    assert!((h - exact).abs() <= 3.0 * se, "{h} vs {exact}");

    // the finite difference is exact for affine maps, so tau does not matter
    let base = RngStream::new(16, 0);
    let ramani = |tau: f64| {
        jacobian_trace(&g, &y, &cov, TraceBackend::Ramani { tau, probes: 20_000 }, &mut base.clone(), false).unwrap().0
    };
    let (a, b) = (ramani(1e-2 * sigma), ramani(1e-3 * sigma));
    assert!((a - b).abs() <= 1e-3 * exact.abs());
    assert!((a - h).abs() <= 0.05 * exact.abs().max(0.1));
    assert!(jacobian_trace(&Lifted::new(&Estimator::mlp(&[3, 4, 3], &mut rng).unwrap(), &op), &y, &cov, TraceBackend::Analytic, &mut rng, false).is_err());
}

#[test]
fn gradient_checks_per_kind() {
    let mut rng = RngStream::new(17, 0);
    let op = LinearOperator::identity(4);
    let y = RealVector::from_vec(rng.normal_vec(4));
    assert!(grad_check(&random_affine(4, &mut rng), &y, &op, 5, &mut rng).unwrap() <= 1e-7);
    let mlp = Estimator::mlp(&[4, 8, 8, 4], &mut rng).unwrap();
    assert!(grad_check(&mlp, &y, &op, 5, &mut rng).unwrap() <= 1e-5);
}

#[test]
fn zero_diagonal_is_blind_to_its_own_input() {
    let mut rng = RngStream::new(18, 0);
    let mut est = Estimator::affine_zeros(5, Constraint::ZeroDiagonal).unwrap();
    let p: Vec<f64> = rng.normal_vec(est.num_params());
    est.set_params(&p).unwrap();
    let op = LinearOperator::identity(5);
    for _ in 0..20 {
        let y = RealVector::from_vec(rng.normal_vec(5));
        for i in 0..5 {
            let mut e = RealVector::zeros(5);
            e[i] = 1.0;
            assert_eq!(est.jvp_input(&y, &op, &e).unwrap()[i], 0.0);
        }
    }
    assert!(grad_check(&est, &RealVector::from_vec(rng.normal_vec(5)), &op, 3, &mut rng).unwrap() <= 1e-7);
}
