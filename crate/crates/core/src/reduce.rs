//! Null-space / complement coordinate change.
//!
//! With `V = [N | R]` orthonormal, `N` spanning `null(A)` and `R` its
//! orthogonal complement, `Vᵀ A V = [[0, A_yx], [0, 𝒜]]`. The
//! `x = Rᵀ v` coordinates evolve autonomously and carry all of the
//! stability question; `y = Nᵀ v` is driven by `x` and the noise.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{sorted_right_svd, spectral_abscissa};
use crate::model::StateSpaceModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    /// `[null basis | complement basis]`, orthonormal.
    pub v: DMatrix<f64>,
    pub dim_null: usize,
    pub dim_x: usize,
    /// 𝒜 = Rᵀ A R
    pub acal: DMatrix<f64>,
    /// A_yx = Nᵀ A R
    pub a_yx: DMatrix<f64>,
    pub b: Vec<DVector<f64>>,
    pub c: Vec<RowDVector<f64>>,
    /// Additive noise vectors; identically zero for networks started at u*.
    pub g: Vec<DVector<f64>>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReduceOptions {
    /// Relative rank tolerance; defaults to `dim · ε · 64`.
    pub rtol: Option<f64>,
}

/// Guard band between the largest discarded and smallest kept singular value.
const RANK_GAP: f64 = 1e3;

pub fn reduce(model: &StateSpaceModel, opts: ReduceOptions) -> Result<ReducedModel> {
    let dim = model.dim();
    let (sv, right) = sorted_right_svd(&model.a);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rtol = opts.rtol.unwrap_or(dim as f64 * f64::EPSILON * 64.0);
    let tol = rtol * smax;
    let rank = sv.iter().filter(|&&s| s >= tol).count();
    if rank < dim && rank > 0 {
        let (above, below) = (sv[rank - 1], sv[rank]);
        if above <= RANK_GAP * below {
            return Err(Error::AmbiguousRank { below, above, tol });
        }
    }
    let range = right.columns(0, rank).into_owned();
    let null = right.columns(rank, dim - rank).into_owned();

    let scale = model.a.amax().max(1.0);
    for (k, ch) in model.channels.iter().enumerate() {
        let leak = (&ch.c_bar * &null).amax();
        if leak > 1e-10 * scale {
            return Err(Error::Invariant(format!(
                "noise output C̄_{k} does not annihilate null(A) (|C̄N| = {leak:e})"
            )));
        }
    }

    let acal = range.transpose() * &model.a * &range;
    let a_yx = null.transpose() * &model.a * &range;
    let mut b = Vec::with_capacity(model.s());
    let mut c = Vec::with_capacity(model.s());
    let mut g = Vec::with_capacity(model.s());
    for k in 0..model.s() {
        let (bk, ck) = rank1_factors(model, &range, k);
        let ch = &model.channels[k];
        let offset = (&ch.c_bar * &model.u_star)[0] + ch.g_bar;
        g.push(&bk * offset);
        b.push(bk);
        c.push(ck);
    }
    let mut v = DMatrix::zeros(dim, dim);
    v.columns_mut(0, dim - rank).copy_from(&null);
    v.columns_mut(dim - rank, rank).copy_from(&range);

    let red = ReducedModel {
        v,
        dim_null: dim - rank,
        dim_x: rank,
        acal,
        a_yx,
        b,
        c,
        g,
        sigma: model.channels.iter().map(|ch| ch.sigma).collect(),
    };
    red.check_hurwitz()?;
    Ok(red)
}

/// `(B_k, C_k) = (Rᵀ B̄_k, C̄_k R)`, whose outer product is the xx block of
/// `Vᵀ B̄_k C̄_k V`. `range` is the complement basis `R`.
pub fn rank1_factors(model: &StateSpaceModel, range: &DMatrix<f64>, k: usize) -> (DVector<f64>, RowDVector<f64>) {
    let ch = &model.channels[k];
    (range.transpose() * &ch.b_bar, &ch.c_bar * range)
}

impl ReducedModel {
    /// Builds a reduced model directly (V = I, no null space).
    pub fn from_parts(
        acal: DMatrix<f64>,
        b: Vec<DVector<f64>>,
        c: Vec<RowDVector<f64>>,
        g: Vec<DVector<f64>>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        let n = acal.nrows();
        if acal.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: acal.ncols(),
            });
        }
        let s = b.len();
        for (len, want) in [(c.len(), s), (g.len(), s), (sigma.len(), s)] {
            if len != want {
                return Err(Error::Dimension { expected: want, got: len });
            }
        }
        for k in 0..s {
            for got in [b[k].len(), c[k].len(), g[k].len()] {
                if got != n {
                    return Err(Error::Dimension { expected: n, got });
                }
            }
        }
        let red = ReducedModel {
            v: DMatrix::identity(n, n),
            dim_null: 0,
            dim_x: n,
            acal,
            a_yx: DMatrix::zeros(0, n),
            b,
            c,
            g,
            sigma,
        };
        red.check_hurwitz()?;
        Ok(red)
    }

    /// Scalar system 𝒜 = −a with one channel B = b, C = c, no additive noise.
    pub fn scalar(a: f64, b: f64, c: f64) -> Result<Self> {
        ReducedModel::from_parts(
            DMatrix::from_element(1, 1, -a),
            vec![DVector::from_element(1, b)],
            vec![RowDVector::from_element(1, c)],
            vec![DVector::zeros(1)],
            vec![0.0],
        )
    }

    fn check_hurwitz(&self) -> Result<()> {
        let abscissa = self.spectral_abscissa();
        if abscissa >= 0.0 {
            return Err(Error::ReducedDriftUnstable(abscissa));
        }
        Ok(())
    }

    pub fn s(&self) -> usize {
        self.b.len()
    }

    pub fn spectral_abscissa(&self) -> f64 {
        spectral_abscissa(&self.acal)
    }

    pub fn null_basis(&self) -> DMatrix<f64> {
        self.v.columns(0, self.dim_null).into_owned()
    }

    pub fn range_basis(&self) -> DMatrix<f64> {
        self.v.columns(self.dim_null, self.dim_x).into_owned()
    }

    /// N_k = B_k C_k
    pub fn noise_matrix(&self, k: usize) -> DMatrix<f64> {
        &self.b[k] * &self.c[k]
    }

    pub fn with_uniform_sigma(&self, sigma: f64) -> Self {
        let mut r = self.clone();
        r.sigma = vec![sigma; self.s()];
        r
    }

    pub fn with_sigmas(&self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.s() {
            return Err(Error::Dimension {
                expected: self.s(),
                got: sigma.len(),
            });
        }
        let mut r = self.clone();
        r.sigma = sigma;
        Ok(r)
    }

    pub fn with_additive(&self, g: Vec<DVector<f64>>) -> Result<Self> {
        if g.len() != self.s() || g.iter().any(|gk| gk.len() != self.dim_x) {
            return Err(Error::Dimension {
                expected: self.s(),
                got: g.len(),
            });
        }
        let mut r = self.clone();
        r.g = g;
        Ok(r)
    }

    /// Replaces the rank-1 factorization of channel `k` by `(c B_k, C_k / c)`.
    pub fn rescaled_channel(&self, k: usize, c: f64) -> Self {
        let mut r = self.clone();
        r.b[k] *= c;
        r.c[k] /= c;
        r
    }
}
