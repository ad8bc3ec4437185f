//! Mean-square stability through the small-gain test on squared H2 norms.
//!
//! `Ĝ[i][j] = ‖C_i (sI − 𝒜)⁻¹ B_j‖²₂`. The loop is mean-square
//! exponentially stable iff `σ² ρ(Ĝ) < 1` for a common σ, or
//! `ρ(diag(σ_k²) Ĝ) < 1` for per-link σ_k.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{perron_root, spectral_radius};
use crate::lyapunov::{solve_lyapunov, LyapunovMethod};
use crate::reduce::ReducedModel;

/// Which inequality the verdicts test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentMode {
    /// σ² ρ(Ĝ) < 1; the critical value is σ*² = 1/ρ.
    #[default]
    VarianceTimesRho,
    /// σ ρ(Ĝ) < 1, the literal reading; σ* = 1/ρ so σ*² = 1/ρ².
    StdDevTimesRho,
}

impl std::str::FromStr for ExponentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" | "variance-times-rho" => Ok(ExponentMode::VarianceTimesRho),
            "stddev" | "std-dev-times-rho" => Ok(ExponentMode::StdDevTimesRho),
            other => Err(Error::Unknown {
                what: "exponent mode",
                name: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    #[serde(serialize_with = "ser_matrix")]
    pub ghat: DMatrix<f64>,
    pub rho: f64,
    /// ∞ when ρ = 0.
    pub sigma_star_sq: f64,
    pub mss_at: Vec<(f64, bool)>,
    pub exponent_mode: ExponentMode,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Above this size the Perron root is found by power iteration.
const DENSE_EIG_MAX: usize = 200;

pub fn h2_matrix(red: &ReducedModel) -> Result<DMatrix<f64>> {
    h2_matrix_with(red, LyapunovMethod::Auto)
}

pub fn h2_matrix_with(red: &ReducedModel, method: LyapunovMethod) -> Result<DMatrix<f64>> {
    let s = red.s();
    let solve = |j: usize| -> Result<Vec<f64>> {
        let q = &red.b[j] * red.b[j].transpose();
        let x = solve_lyapunov(&red.acal, &q, method)?;
        Ok((0..s)
            .map(|i| {
                let ci = &red.c[i];
                (ci * &x * ci.transpose())[0].max(0.0)
            })
            .collect())
    };

    #[cfg(feature = "parallel")]
    let columns: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..s).into_par_iter().map(solve).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<Result<Vec<f64>>> = (0..s).map(solve).collect();

    let mut ghat = DMatrix::zeros(s, s);
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (i, v) in col.into_iter().enumerate() {
            ghat[(i, j)] = v;
        }
    }
    Ok(ghat)
}

/// ρ of an entrywise nonnegative matrix.
pub fn nonnegative_spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() > DENSE_EIG_MAX {
        perron_root(m, 1e-10, 100_000)
    } else {
        spectral_radius(m)
    }
}

fn critical_from_rho(rho: f64, mode: ExponentMode) -> f64 {
    if rho == 0.0 {
        return f64::INFINITY;
    }
    match mode {
        ExponentMode::VarianceTimesRho => 1.0 / rho,
        ExponentMode::StdDevTimesRho => 1.0 / (rho * rho),
    }
}

fn verdict(rho: f64, sigma_sq: f64, mode: ExponentMode) -> bool {
    match mode {
        ExponentMode::VarianceTimesRho => sigma_sq * rho < 1.0,
        ExponentMode::StdDevTimesRho => sigma_sq.sqrt() * rho < 1.0,
    }
}

/// σ*² = 1/ρ(Ĝ).
pub fn critical_variance(red: &ReducedModel) -> Result<f64> {
    let rho = nonnegative_spectral_radius(&h2_matrix(red)?);
    Ok(critical_from_rho(rho, ExponentMode::VarianceTimesRho))
}

/// Common-variance verdict: σ² ρ(Ĝ) < 1.
pub fn is_mss(red: &ReducedModel, sigma_sq: f64) -> Result<bool> {
    if sigma_sq < 0.0 {
        return Err(Error::NegativeVariance(sigma_sq));
    }
    let rho = nonnegative_spectral_radius(&h2_matrix(red)?);
    Ok(verdict(rho, sigma_sq, ExponentMode::VarianceTimesRho))
}

/// Per-link verdict: ρ(diag(σ_k²) Ĝ) < 1.
pub fn is_mss_heterogeneous(red: &ReducedModel, sigma_sq: &[f64]) -> Result<bool> {
    Ok(heterogeneous_radius(red, sigma_sq)? < 1.0)
}

pub fn heterogeneous_radius(red: &ReducedModel, sigma_sq: &[f64]) -> Result<f64> {
    if sigma_sq.len() != red.s() {
        return Err(Error::Dimension {
            expected: red.s(),
            got: sigma_sq.len(),
        });
    }
    if let Some(&bad) = sigma_sq.iter().find(|&&v| v < 0.0) {
        return Err(Error::NegativeVariance(bad));
    }
    let mut scaled = h2_matrix(red)?;
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= sigma_sq[i];
    }
    Ok(nonnegative_spectral_radius(&scaled))
}

pub fn analyze(red: &ReducedModel, queries: &[f64], mode: ExponentMode) -> Result<StabilityReport> {
    if let Some(&bad) = queries.iter().find(|&&v| v < 0.0) {
        return Err(Error::NegativeVariance(bad));
    }
    let ghat = h2_matrix(red)?;
    let rho = nonnegative_spectral_radius(&ghat);
    Ok(StabilityReport {
        mss_at: queries.iter().map(|&q| (q, verdict(rho, q, mode))).collect(),
        sigma_star_sq: critical_from_rho(rho, mode),
        ghat,
        rho,
        exponent_mode: mode,
    })
}
