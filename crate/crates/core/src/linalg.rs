//! Small dense helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigenvalues of a general real matrix. Empty for a 0×0 input.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum (−∞ for an empty matrix).
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus via a dense eigensolver (0 for an empty matrix).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Perron root of an entrywise nonnegative matrix by power iteration on
/// `M + I` (the shift makes the dominant eigenvalue unique in modulus for
/// irreducible inputs and leaves reducible ones convergent).
pub fn perron_root(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let shifted = m + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let y = &shifted * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    (lambda - 1.0).max(0.0)
}

/// SVD with singular values sorted in descending order. Returns
/// `(sigma, V)` where the columns of `V` are the matching right singular
/// vectors (a full orthonormal basis for square input).
pub fn sorted_right_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(n, order.len());
    for (col, &i) in order.iter().enumerate() {
        v.set_column(col, &vt.row(i).transpose());
    }
    (sigma, v)
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Kronecker sum A ⊕ A = A ⊗ I + I ⊗ A, acting on column-major vec(Q) as
/// vec(AQ + QAᵀ).
pub fn kron_sum(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    a.kronecker(&eye) + eye.kronecker(a)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric to `sym_tol` (relative) and smallest eigenvalue ≥ −`psd_tol`.
pub fn is_symmetric_psd(m: &DMatrix<f64>, sym_tol: f64, psd_tol: f64) -> bool {
    if m.is_empty() {
        return true;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > sym_tol * scale {
        return false;
    }
    symmetrize(m).symmetric_eigenvalues().min() >= -psd_tol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_sum_acts_as_lyapunov_operator() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let lhs = kron_sum(&a) * vec_of(&q);
        let rhs = vec_of(&(&a * &q + &q * a.transpose()));
        assert!((lhs - rhs).amax() < 1e-14);
    }

    #[test]
    fn perron_matches_dense() {
        let m = DMatrix::from_row_slice(3, 3, &[0.1, 2.0, 0.0, 0.5, 0.2, 0.3, 0.0, 1.0, 0.4]);
        assert!((perron_root(&m, 1e-14, 10_000) - spectral_radius(&m)).abs() < 1e-9);
    }

    #[test]
    fn sorted_svd_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (s, v) = sorted_right_svd(&m);
        assert!(s[0] >= s[1] && s[1] >= s[2]);
        assert!((v.transpose() * &v - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}
