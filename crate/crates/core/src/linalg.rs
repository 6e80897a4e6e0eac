//! Dense linear algebra helpers on 64-bit floats.
//!
//! Vectors and matrices are `nalgebra` dynamic types. Transforms are unitary
//! (scaled by `1/sqrt(n)`), so a round trip is the identity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub type RealVector = DVector<f64>;
pub type RealMatrix = DMatrix<f64>;
pub type ComplexVector = Vec<Complex64>;

/// Default relative cutoff for singular values in pseudo-inverses.
pub const PINV_TOL: f64 = 1e-12;

/// Moore-Penrose pseudo-inverse. Singular values below `tol * sigma_max` are dropped.
pub fn pinv(m: &RealMatrix, tol: f64) -> RealMatrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return RealMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = RealMatrix::zeros(cols, rows);
    if smax == 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol * smax {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// `pinv(m) * y` computed through the SVD of `m`.
pub fn svd_pinv_apply(m: &RealMatrix, y: &RealVector, tol: f64) -> Result<RealVector> {
    if m.nrows() != y.len() {
        return Err(Error::shape(format!(
            "matrix has {} rows, vector has {} entries",
            m.nrows(),
            y.len()
        )));
    }
    Ok(pinv(m, tol) * y)
}

/// Unitary forward DFT.
pub fn dft(x: &[Complex64]) -> ComplexVector {
    transform(x, false)
}

/// Unitary inverse DFT.
pub fn idft(x: &[Complex64]) -> ComplexVector {
    transform(x, true)
}

fn transform(x: &[Complex64], inverse: bool) -> ComplexVector {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut buf = x.to_vec();
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

pub fn to_complex(x: &RealVector) -> ComplexVector {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Eigen-decomposition of a symmetric matrix (symmetrised first).
pub fn sym_eigen(m: &RealMatrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    if m.is_empty() {
        return SymmetricEigen { eigenvectors: RealMatrix::zeros(0, 0), eigenvalues: RealVector::zeros(0) };
    }
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
}

pub fn min_eigenvalue(m: &RealMatrix) -> f64 {
    sym_eigen(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `M^p` for a symmetric positive semi-definite matrix; eigenvalues below
/// `tol * lambda_max` are treated as zero (so negative powers act as pseudo-inverses).
pub fn sym_power(m: &RealMatrix, p: f64, tol: f64) -> RealMatrix {
    let e = sym_eigen(m);
    let lmax = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let d = e.eigenvalues.map(|l| if l > tol * lmax && l > 0.0 { l.powf(p) } else { 0.0 });
    &e.eigenvectors * RealMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
/// Falls back to the symmetric square root when the matrix is singular.
pub fn sqrt_factor(m: &RealMatrix) -> RealMatrix {
    match m.clone().cholesky() {
        Some(c) => c.l(),
        None => sym_power(m, 0.5, 0.0),
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Ordinary least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Dense matrix of a linear map given by its action on basis vectors.
pub fn matrix_of<F>(rows: usize, cols: usize, mut f: F) -> Result<RealMatrix>
where
    F: FnMut(&RealVector) -> Result<RealVector>,
{
    let mut out = RealMatrix::zeros(rows, cols);
    for j in 0..cols {
        let mut e = RealVector::zeros(cols);
        e[j] = 1.0;
        let col = f(&e)?;
        if col.len() != rows {
            return Err(Error::shape(format!("expected {rows} outputs, got {}", col.len())));
        }
        out.set_column(j, &col);
    }
    Ok(out)
}

pub fn check_len(v: &RealVector, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::shape(format!("{what}: expected length {n}, got {}", v.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrices_have_no_eigenvalues() {
        let e = RealMatrix::zeros(0, 0);
        assert_eq!(sym_eigen(&e).eigenvalues.len(), 0);
        assert_eq!(sym_power(&e, -1.0, 0.0).shape(), (0, 0));
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = RealMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, PINV_TOL);
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn pinv_drops_tiny_singular_values() {
        let m = RealMatrix::from_diagonal(&RealVector::from_vec(vec![1.0, 1e-14]));
        let p = pinv(&m, PINV_TOL);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn dft_is_unitary() {
        let x: ComplexVector = (0..7).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let y = dft(&x);
        let e0: f64 = x.iter().map(|c| c.norm_sqr()).sum();
        let e1: f64 = y.iter().map(|c| c.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-10);
        let z = idft(&y);
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
        let (s, c) = linear_fit(&x, &y);
        assert!((s + 0.5).abs() < 1e-12 && (c - 2.0).abs() < 1e-12);
    }
}
