//! Second-moment propagation for the reduced SDE
//! `dx = 𝒜x dt + Σ_k σ_k (N_k x + G_k) dξ_k`, `N_k = B_k C_k` (Itô).
//!
//! `Q = E[x xᵀ]` obeys
//! `Q̇ = 𝒜Q + Q𝒜ᵀ + Σ σ_k² (N_k Q N_kᵀ + N_k μ G_kᵀ + G_k μᵀ N_kᵀ + G_k G_kᵀ)`
//! and `μ̇ = 𝒜μ`. Vectorizing gives the generator
//! `𝒜 ⊕ 𝒜 + Σ σ_k² N_k ⊗ N_k`, whose spectral abscissa decides
//! mean-square stability independently of the H2 route in `stability`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric_psd, kron_sum, spectral_abscissa, symmetrize, unvec, vec_of};
use crate::reduce::ReducedModel;

/// Default bound on `dim_x` for the explicit `dim_x² × dim_x²` generator.
pub const DEFAULT_MAX_DIM: usize = 150;

#[derive(Debug, Clone)]
pub struct VectorizedGenerator {
    pub avec: DMatrix<f64>,
    /// vec(Σ σ_k² G_k G_kᵀ), the forcing of the μ → 0 steady state.
    pub bvec: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

impl MomentTrajectory {
    pub fn traces(&self) -> Vec<f64> {
        self.cov.iter().map(|q| q.trace()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MomentOptions {
    pub t_end: f64,
    /// Defaults to `min(0.01, 0.1 / ‖𝒜‖_F)`.
    pub dt: Option<f64>,
    /// Store every n-th step (the initial and final states are always kept).
    pub record_every: usize,
    /// Relative disagreement allowed between the `dt` and `dt/2` solutions.
    pub halving_tol: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            t_end: 10.0,
            dt: None,
            record_every: 10,
            halving_tol: 1e-6,
        }
    }
}

pub fn default_dt(red: &ReducedModel) -> f64 {
    let norm = red.acal.norm();
    if norm == 0.0 {
        0.01
    } else {
        (0.1 / norm).min(0.01)
    }
}

pub fn vectorized_generator(red: &ReducedModel) -> Result<VectorizedGenerator> {
    vectorized_generator_guarded(red, DEFAULT_MAX_DIM)
}

pub fn vectorized_generator_guarded(red: &ReducedModel, max_dim: usize) -> Result<VectorizedGenerator> {
    let n = red.dim_x;
    if n > max_dim {
        return Err(Error::MemoryGuard { dim: n, limit: max_dim });
    }
    let mut avec = kron_sum(&red.acal);
    let mut forcing = DMatrix::zeros(n, n);
    for k in 0..red.s() {
        let s2 = red.sigma[k] * red.sigma[k];
        if s2 == 0.0 {
            continue;
        }
        let nk = red.noise_matrix(k);
        avec += nk.kronecker(&nk) * s2;
        forcing += &red.g[k] * red.g[k].transpose() * s2;
    }
    Ok(VectorizedGenerator {
        avec,
        bvec: vec_of(&forcing),
    })
}

/// Spectral abscissa of the generator at a common variance σ².
pub fn hurwitz_oracle(red: &ReducedModel, sigma_sq: f64) -> Result<f64> {
    if sigma_sq < 0.0 {
        return Err(Error::NegativeVariance(sigma_sq));
    }
    let gen = vectorized_generator(&red.with_uniform_sigma(sigma_sq.sqrt()))?;
    Ok(spectral_abscissa(&gen.avec))
}

/// σ*² located as the sign change of [`hurwitz_oracle`], to relative
/// width `rel_tol`. ∞ when no finite variance destabilizes.
pub fn critical_variance_bisection(red: &ReducedModel, rel_tol: f64) -> Result<f64> {
    if red.s() == 0 {
        return Ok(f64::INFINITY);
    }
    let stable = |v: f64| -> Result<bool> { Ok(hurwitz_oracle(red, v)? < 0.0) };
    if !stable(0.0)? {
        return Err(Error::ReducedDriftUnstable(red.spectral_abscissa()));
    }
    let (mut lo, mut hi) = (0.5, 1.0);
    if stable(hi)? {
        while stable(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return Ok(f64::INFINITY);
            }
        }
    } else {
        while !stable(lo)? {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-300 {
                return Ok(0.0);
            }
        }
    }
    while hi - lo > rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Long-time second moment `unvec(−Avec⁻¹ Bvec)` with μ → 0.
pub fn steady_state_covariance(red: &ReducedModel, sigma_sq: f64) -> Result<DMatrix<f64>> {
    let gen = vectorized_generator(&red.with_uniform_sigma(sigma_sq.sqrt()))?;
    let q = gen.avec.lu().solve(&(-&gen.bvec)).ok_or(Error::SingularGenerator)?;
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularGenerator);
    }
    Ok(symmetrize(&unvec(&q, red.dim_x)))
}

struct MomentRhs<'a> {
    red: &'a ReducedModel,
    noise: Vec<DMatrix<f64>>,
}

impl<'a> MomentRhs<'a> {
    fn new(red: &'a ReducedModel) -> Self {
        let noise = (0..red.s()).map(|k| red.noise_matrix(k)).collect();
        MomentRhs { red, noise }
    }

    fn eval(&self, mu: &DVector<f64>, q: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let a = &self.red.acal;
        let dmu = a * mu;
        let aq = a * q;
        let mut dq = &aq + aq.transpose();
        for (k, nk) in self.noise.iter().enumerate() {
            let s2 = self.red.sigma[k] * self.red.sigma[k];
            if s2 == 0.0 {
                continue;
            }
            let gk = &self.red.g[k];
            let cross = nk * mu * gk.transpose();
            dq += (nk * q * nk.transpose() + &cross + cross.transpose() + gk * gk.transpose()) * s2;
        }
        (dmu, dq)
    }

    fn rk4(&self, mu: &DVector<f64>, q: &DMatrix<f64>, h: f64) -> (DVector<f64>, DMatrix<f64>) {
        let (k1m, k1q) = self.eval(mu, q);
        let (k2m, k2q) = self.eval(&(mu + &k1m * (h / 2.0)), &(q + &k1q * (h / 2.0)));
        let (k3m, k3q) = self.eval(&(mu + &k2m * (h / 2.0)), &(q + &k2q * (h / 2.0)));
        let (k4m, k4q) = self.eval(&(mu + &k3m * h), &(q + &k3q * h));
        let mu_next = mu + (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
        let q_next = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        (mu_next, symmetrize(&q_next))
    }
}

pub fn propagate_moments(
    red: &ReducedModel,
    mu0: &DVector<f64>,
    q0: &DMatrix<f64>,
    opts: &MomentOptions,
) -> Result<MomentTrajectory> {
    let n = red.dim_x;
    if mu0.len() != n {
        return Err(Error::Dimension { expected: n, got: mu0.len() });
    }
    if q0.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: q0.nrows() });
    }
    if !is_symmetric_psd(q0, 1e-10, 1e-12) {
        return Err(Error::NotPsd);
    }
    let dt = opts.dt.unwrap_or_else(|| default_dt(red));
    if !(dt > 0.0) || !(opts.t_end >= 0.0) {
        return Err(Error::Config(format!("need dt > 0 and t_end >= 0, got dt={dt}, t_end={}", opts.t_end)));
    }
    let steps = (opts.t_end / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { opts.t_end / steps as f64 };
    let every = opts.record_every.max(1);
    let rhs = MomentRhs::new(red);

    let mut times = vec![0.0];
    let mut mean = vec![mu0.clone()];
    let mut cov = vec![symmetrize(q0)];
    let (mut mu, mut q) = (mu0.clone(), symmetrize(q0));
    let (mut mu_half, mut q_half) = (mu.clone(), q.clone());
    let floor = q0.norm() * 1e-12 + f64::MIN_POSITIVE;
    for step in 1..=steps {
        (mu, q) = rhs.rk4(&mu, &q, h);
        for _ in 0..2 {
            (mu_half, q_half) = rhs.rk4(&mu_half, &q_half, h / 2.0);
        }
        if step % every == 0 || step == steps {
            let scale = q_half.norm().max(floor);
            let gap = (&q - &q_half).norm() / scale;
            if gap > opts.halving_tol {
                return Err(Error::StepTooLarge(gap));
            }
            times.push(step as f64 * h);
            mean.push(mu_half.clone());
            cov.push(q_half.clone());
        }
    }
    Ok(MomentTrajectory { times, mean, cov })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub abscissa: f64,
    pub noise_free_mse: bool,
    pub additive_bounded: bool,
    pub equivalent: bool,
}

/// Executable form of the equivalence between mean-square exponential
/// stability of the noise-free system and second-moment boundedness of
/// the system with additive noise. The first verdict comes from the
/// generator spectrum; the second from integrating the moment ODE with
/// the additive terms and checking whether trace(Q̄) keeps growing over the
/// last fifth of the horizon.
pub fn lemma1_check(red: &ReducedModel, sigma_sq: f64) -> Result<Lemma1Report> {
    let abscissa = hurwitz_oracle(red, sigma_sq)?;
    if abscissa.abs() < 1e-6 {
        return Err(Error::Boundary(abscissa));
    }
    let noisy = red.with_uniform_sigma(sigma_sq.sqrt());
    let n = red.dim_x;
    let base_dt = default_dt(red);
    const MAX_STEPS: f64 = 2e6;
    let t_end = (12.0 / abscissa.abs()).min(MAX_STEPS * base_dt).max(50.0 * base_dt);
    let mu0 = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let q0 = DMatrix::identity(n, n);
    // Halve the step until the step-doubling check is satisfied.
    let mut dt = base_dt;
    let traj = loop {
        let opts = MomentOptions {
            t_end,
            dt: Some(dt),
            record_every: ((t_end / dt) as usize / 100).max(1),
            halving_tol: 1e-4,
        };
        match propagate_moments(&noisy, &mu0, &q0, &opts) {
            Err(Error::StepTooLarge(_)) if dt > base_dt / 16.0 => dt /= 2.0,
            other => break other?,
        }
    };
    let traces = traj.traces();
    let last = traces[traces.len() - 1];
    let window_start = traj
        .times
        .iter()
        .position(|&t| t >= 0.8 * t_end)
        .unwrap_or(0);
    let ratio = last / traces[window_start];
    let additive_bounded = last.is_finite() && ratio <= 2.0;
    let noise_free_mse = abscissa < 0.0;
    Ok(Lemma1Report {
        abscissa,
        noise_free_mse,
        additive_bounded,
        equivalent: noise_free_mse == additive_bounded,
    })
}
