//! Continuous Lyapunov equation `A X + X Aᵀ + Q = 0`.
//!
//! Two routes: the vectorized Kronecker solve `(A ⊕ A) vec X = −vec Q`,
//! which costs O(n⁶) and is only used at small sizes, and a complex-Schur
//! (Bartels–Stewart) solve at O(n³).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{kron_sum, symmetrize, unvec, vec_of};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LyapunovMethod {
    /// Kronecker below [`KRONECKER_MAX_DIM`], Schur above.
    #[default]
    Auto,
    Kronecker,
    Schur,
}

pub const KRONECKER_MAX_DIM: usize = 20;

pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, method: LyapunovMethod) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Lyapunov(format!(
            "shape mismatch: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let x = match method {
        LyapunovMethod::Kronecker => kronecker(a, q)?,
        LyapunovMethod::Schur => schur(a, q)?,
        LyapunovMethod::Auto if n <= KRONECKER_MAX_DIM => kronecker(a, q)?,
        LyapunovMethod::Auto => schur(a, q)?,
    };
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Lyapunov("non-finite solution".into()));
    }
    Ok(x)
}

fn kronecker(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rhs: DVector<f64> = -vec_of(q);
    let x = kron_sum(a)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Lyapunov("A ⊕ A is singular (A has eigenvalues λ_i + λ_j = 0)".into()))?;
    Ok(symmetrize_if(q, unvec(&x, n)))
}

fn schur(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let (u, t) = ac.schur().unpack();
    let uh = u.adjoint();
    let f = -(&uh * q.map(|v| Complex64::new(v, 0.0)) * &u);

    // T Y + Y Tᴴ = F, solved column by column from the right.
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in (0..n).rev() {
        let mut rhs = f.column(j).into_owned();
        for k in (j + 1)..n {
            let c = t[(j, k)].conj();
            if c != Complex64::new(0.0, 0.0) {
                rhs -= y.column(k) * c;
            }
        }
        let shift = t[(j, j)].conj();
        let mut m = t.clone();
        for i in 0..n {
            m[(i, i)] += shift;
            if m[(i, i)].norm() <= 1e-14 * scale {
                return Err(Error::Lyapunov(format!(
                    "eigenvalues {} and {} sum to zero",
                    t[(i, i)],
                    t[(j, j)]
                )));
            }
        }
        let col = m
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::Lyapunov("triangular solve failed".into()))?;
        y.set_column(j, &col);
    }
    let x = (&u * y * &uh).map(|z| z.re);
    Ok(symmetrize_if(q, x))
}

fn symmetrize_if(q: &DMatrix<f64>, x: DMatrix<f64>) -> DMatrix<f64> {
    if (q - q.transpose()).amax() == 0.0 {
        symmetrize(&x)
    } else {
        x
    }
}
