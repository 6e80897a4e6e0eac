use proptest::prelude::*;

use selfsup::linalg::{mean_se, pinv, svd_pinv_apply, variance};
use selfsup::operators::{is_equivariant, stacked_rank_condition};
use selfsup::{Dist, GroupAction, LinearOperator, RealMatrix, RealVector, RngStream, Transform};

fn random_vec(n: usize, rng: &mut RngStream) -> RealVector {
    RealVector::from_vec(rng.normal_vec(n))
}

fn random_mask(n: usize, rng: &mut RngStream) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.6)).collect();
    m[0] = true;
    m
}

/// One operator of every kind on `R^n`, plus row-masked and composed variants.
fn zoo(n: usize, rng: &mut RngStream) -> Vec<LinearOperator> {
    let dense = RealMatrix::from_fn(n / 2 + 1, n, |_, _| rng.normal());
    let kernel = rng.normal_vec(3);
    let mask = random_mask(n, rng);
    let mut ops = vec![
        LinearOperator::identity(n),
        LinearOperator::diagonal_mask(mask.clone()),
        LinearOperator::masked_dft(random_mask(n, rng)),
        LinearOperator::subsampled_conv(kernel, 2, n).unwrap(),
        LinearOperator::dense(dense),
    ];
    let shift = Transform::Shift { h: 1, w: n, dy: 0, dx: 1 + rng.index(n - 1) };
    let flip = Transform::Flip { h: 1, w: n };
    let composed: Vec<LinearOperator> =
        ops.iter().flat_map(|a| [a.compose_with_transform(&shift).unwrap(), a.compose_with_transform(&flip).unwrap()]).collect();
    let rows = random_mask(ops[4].m(), rng);
    ops.push(ops[4].split_rows(&rows).unwrap());
    ops.extend(composed);
    ops
}

fn columns_of<F: Fn(&RealVector) -> RealVector>(n: usize, f: F) -> RealMatrix {
    let cols: Vec<RealVector> = (0..n).map(|j| f(&RealVector::from_fn(n, |i, _| f64::from(u8::from(i == j))))).collect();
    RealMatrix::from_columns(&cols)
}

#[test]
fn mask_examples() {
    let a = LinearOperator::diagonal_mask(vec![true, false, true]);
    let y = a.apply(&RealVector::from_vec(vec![5.0, 6.0, 7.0])).unwrap();
    assert_eq!(y.as_slice(), &[5.0, 0.0, 7.0]);
    assert_eq!(a.pinv_apply(&y).unwrap().as_slice(), &[5.0, 0.0, 7.0]);
    assert!(a.apply(&RealVector::zeros(4)).is_err());
}

#[test]
fn full_masked_dft_round_trips() {
    let mut rng = RngStream::new(1, 0);
    let a = LinearOperator::masked_dft(vec![true; 8]);
    let x = random_vec(8, &mut rng);
    assert!((a.pinv_apply(&a.apply(&x).unwrap()).unwrap() - &x).amax() < 1e-10);
}

#[test]
fn composition_examples() {
    let x = RealVector::from_vec(vec![1.0, 2.0, 3.0]);
    let shift = Transform::Shift { h: 1, w: 3, dy: 0, dx: 1 };
    let a = LinearOperator::identity(3).compose_with_transform(&shift).unwrap();
    assert_eq!(a.apply(&x).unwrap().as_slice(), &[3.0, 1.0, 2.0]);
    let b = LinearOperator::diagonal_mask(vec![true, false, true]).compose_with_transform(&shift).unwrap();
    assert_eq!(b.apply(&x).unwrap().as_slice(), &[3.0, 0.0, 2.0]);
}

#[test]
fn stacked_rank_examples() {
    let a = LinearOperator::diagonal_mask(vec![true, false]);
    let b = LinearOperator::diagonal_mask(vec![false, true]);
    assert!((stacked_rank_condition(&[&a, &b], &[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-12);
    assert!(stacked_rank_condition(&[&a], &[1.0]).unwrap() <= 1e-12);

    let mut rng = RngStream::new(2, 0);
    for trial in 0..20 {
        // every fourth trial shares a null direction
        let null = random_vec(4, &mut rng);
        let ops: Vec<LinearOperator> = (0..3)
            .map(|_| {
                let mut m = RealMatrix::from_fn(2, 4, |_, _| rng.normal());
                if trial % 4 == 0 {
                    m -= &m * &null * null.transpose() / null.norm_squared();
                }
                LinearOperator::dense(m)
            })
            .collect();
        let refs: Vec<&LinearOperator> = ops.iter().collect();
        let holds = stacked_rank_condition(&refs, &[1.0 / 3.0; 3]).unwrap() > 1e-9;
        let stacked = RealMatrix::from_fn(6, 4, |r, c| ops[r / 2].matrix().unwrap()[(r % 2, c)]);
        assert_eq!(holds, stacked.rank(1e-9) == 4, "trial {trial}");
    }
}

#[test]
fn equivariance_examples() {
    let shifts = GroupAction::circular_shifts(1, 4);
    let circ = RealMatrix::from_fn(4, 4, |i, j| [1.0, 0.5, -0.25, 0.0][(i + 4 - j) % 4]);
    assert!(is_equivariant(&LinearOperator::dense(circ), &shifts, 1e-12).unwrap());
    let mask = LinearOperator::diagonal_mask(vec![true, false, true, true]);
    assert!(!is_equivariant(&mask, &shifts, 1e-6).unwrap());
    let scalings = GroupAction::amplitude_scalings(4, &[0.5, 2.0]).unwrap();
    assert!(is_equivariant(&mask, &scalings, 1e-12).unwrap());
}

#[test]
fn groups_close_and_invert() {
    let groups = [
        GroupAction::circular_shifts(2, 3),
        GroupAction::flips(2, 3),
        GroupAction::rotations90(3),
        GroupAction::circular_shifts(1, 8),
    ];
    let mut rng = RngStream::new(3, 0);
    for g in &groups {
        let table = g.closure_table().expect("finite permutation group is closed");
        let inv = g.inverse_indices().expect("inverses exist");
        let x = random_vec(g.n(), &mut rng);
        for (a, ta) in g.elements.iter().enumerate() {
            assert_eq!(table[a].len(), g.len());
            let back = g.elements[inv[a]].apply(&ta.apply(&x));
            assert!((back - &x).amax() < 1e-12);
            for (b, tb) in g.elements.iter().enumerate() {
                let composed = g.elements[table[a][b]].apply(&x);
                assert!((composed - ta.apply(&tb.apply(&x))).amax() < 1e-12);
            }
        }
    }
}

#[test]
fn pinv_examples() {
    let v = RealVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert_eq!(svd_pinv_apply(&RealMatrix::identity(3, 3), &v, 1e-12).unwrap(), v);
    let d = RealMatrix::from_diagonal(&RealVector::from_vec(vec![2.0, 0.0]));
    let out = svd_pinv_apply(&d, &RealVector::from_vec(vec![4.0, 5.0]), 1e-12).unwrap();
    assert!((out - RealVector::from_vec(vec![2.0, 0.0])).amax() < 1e-14);
    assert!(svd_pinv_apply(&d, &v, 1e-12).is_err());
}

#[test]
fn sampler_examples() {
    let mut rng = RngStream::new(4, 0);
    assert_eq!(rng.sample(&Dist::Poisson { rate: 0.0 }).unwrap(), 0.0);
    assert_eq!(rng.sample(&Dist::Bernoulli { p: 1.0 }).unwrap(), 1.0);
    let err = rng.sample(&Dist::Gaussian { mean: 0.0, std: -1.0 }).unwrap_err();
    assert!(err.to_string().contains("std"), "{err}");

    let draws: Vec<f64> = (0..1_000_000).map(|_| rng.sample(&Dist::Gaussian { mean: 0.0, std: 1.0 }).unwrap()).collect();
    let (mean, _) = mean_se(&draws);
    let var = variance(&draws);
    assert!(mean.abs() <= 0.004, "mean {mean}");
    assert!((0.995..=1.005).contains(&var), "variance {var}");
}

#[test]
fn poisson_moments() {
    let mut rng = RngStream::new(5, 0);
    for rate in [0.5, 2.0, 20.0] {
        let d: Vec<f64> = (0..100_000).map(|_| rng.sample(&Dist::Poisson { rate }).unwrap()).collect();
        let (mean, se) = mean_se(&d);
        assert!((mean - rate).abs() <= 3.0 * se, "rate {rate}: mean {mean}");
        let sq: Vec<f64> = d.iter().map(|v| (v - mean).powi(2)).collect();
        let (var, var_se) = mean_se(&sq);
        assert!((var - rate).abs() <= 3.0 * var_se, "rate {rate}: variance {var}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_operator_passes_the_dot_test(seed in any::<u64>(), n in 4usize..12) {
        let mut rng = RngStream::new(seed, 0);
        for op in zoo(n, &mut rng) {
            for _ in 0..100 {
                let x = random_vec(op.n(), &mut rng);
                let u = random_vec(op.m(), &mut rng);
                let lhs = op.apply(&x).unwrap().dot(&u);
                let rhs = x.dot(&op.adjoint(&u).unwrap());
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + x.norm() * u.norm()), "{:?}", op.kind());
            }
        }
    }

    #[test]
    fn pinv_gives_orthogonal_projectors(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = RngStream::new(seed, 1);
        let ops = [LinearOperator::diagonal_mask(random_mask(n, &mut rng)), LinearOperator::masked_dft(random_mask(n, &mut rng))];
        for op in ops {
            let m = op.m();
            let p = columns_of(m, |u| op.apply(&op.pinv_apply(u).unwrap()).unwrap());
            prop_assert!((&p * &p - &p).norm() <= 1e-10 * (1.0 + p.norm()));
            prop_assert!((&p - p.transpose()).norm() <= 1e-10 * (1.0 + p.norm()));
            let x = random_vec(n, &mut rng);
            let ax = op.apply(&x).unwrap();
            prop_assert!((op.apply(&op.pinv_apply(&ax).unwrap()).unwrap() - &ax).amax() < 1e-10);
        }
    }

    #[test]
    fn pinv_satisfies_moore_penrose(seed in any::<u64>(), r in 1usize..64, c in 1usize..64, rank in 1usize..64) {
        let mut rng = RngStream::new(seed, 2);
        let k = rank.min(r).min(c);
        let m = RealMatrix::from_fn(r, k, |_, _| rng.normal()) * RealMatrix::from_fn(k, c, |_, _| rng.normal());
        let p = pinv(&m, 1e-10);
        prop_assert!((&m * &p * &m - &m).norm() <= 1e-10 * m.norm());
        prop_assert!((&p * &m * &p - &p).norm() <= 1e-10 * p.norm());
    }

    #[test]
    fn samplers_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let dists = [
            Dist::Uniform { lo: -1.0, hi: 2.0 },
            Dist::Gaussian { mean: 1.0, std: 2.0 },
            Dist::Bernoulli { p: 0.3 },
            Dist::Poisson { rate: 7.5 },
            Dist::Binomial { trials: 12, p: 0.4 },
            Dist::Beta { a: 0.5, b: 2.0 },
            Dist::Gamma { shape: 3.0, rate: 2.0 },
        ];
        let a = RngStream::new(seed, stream);
        let (mut r1, mut r2) = (a.clone(), a);
        for d in &dists {
            prop_assert_eq!(r1.sample(d).unwrap().to_bits(), r2.sample(d).unwrap().to_bits());
        }
    }
}
