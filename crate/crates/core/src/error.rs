use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid network: {0}")]
    Invariant(String),

    #[error("duplicate {what} {id}")]
    Duplicate { what: &'static str, id: String },

    #[error("network is disconnected: bus {0} unreachable from bus {1}")]
    Disconnected(u32, u32),

    #[error("load bus damping singular at bus {0} (freq_damping + cost_coeff = 0)")]
    LoadDampingSingular(u32),

    #[error("non-positive reactance {0}")]
    NonPositiveReactance(f64),

    #[error("non-positive line weight on line ({from}, {to}): phase difference {dphase} rad")]
    NonPositiveWeight { from: u32, to: u32, dphase: f64 },

    #[error("nominal phase difference {0} rad makes the line weight non-positive")]
    InfeasibleAngle(f64),

    #[error("cost coefficient must be positive, got {0}")]
    NonPositiveAlpha(f64),

    #[error("optimal load control is degenerate: all damping and cost coefficients are zero")]
    DegenerateOlc,

    #[error("inconsistent forcing: equilibrium residual {residual:e} exceeds {tolerance:e}")]
    InconsistentForcing { residual: f64, tolerance: f64 },

    #[error("reduced drift unstable: spectral abscissa {0:e} >= 0")]
    ReducedDriftUnstable(f64),

    #[error(
        "rank of drift matrix is numerically ambiguous (singular values {below:e} / {above:e} around tolerance {tol:e}); pass an explicit rank tolerance"
    )]
    AmbiguousRank { below: f64, above: f64, tol: f64 },

    #[error("Lyapunov solve failed: {0}")]
    Lyapunov(String),

    #[error("negative variance {0}")]
    NegativeVariance(f64),

    #[error("vectorized generator too large: dim_x = {dim} exceeds guard {limit}")]
    MemoryGuard { dim: usize, limit: usize },

    #[error("initial covariance is not symmetric positive semidefinite")]
    NotPsd,

    #[error("time step too large: step-halving disagreement {0:e}")]
    StepTooLarge(f64),

    #[error("singular vectorized generator (at the stability boundary)")]
    SingularGenerator,

    #[error("moment stability classification is inconclusive: spectral abscissa {0:e} is at the boundary")]
    Boundary(f64),

    #[error("invalid simulation config: {0}")]
    Config(String),

    #[error("all {n_paths} paths diverged (first divergence at t = {first:.6} s, last at t = {last:.6} s)")]
    AllDiverged { n_paths: usize, first: f64, last: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
