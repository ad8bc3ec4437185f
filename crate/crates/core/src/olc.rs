//! Optimal load control with quadratic disutility c_j(d) = d²/(2α_j).
//!
//! Saturation bounds are honored by [`control_law`] (and hence by the
//! nonlinear simulator) but ignored by the closed-form optimum, which is the
//! unsaturated KKT point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{Bus, PowerNetwork};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlcSolution {
    /// Common dual variable ν* (rad/s); also the equilibrium frequency.
    pub nu_star: f64,
    /// Controllable-load changes d_j, in bus order.
    pub d: Vec<f64>,
    /// Frequency-sensitive load changes d̂_j, in bus order.
    pub d_hat: Vec<f64>,
    pub objective: f64,
}

pub fn cost(alpha: f64, d: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    Ok(d * d / (2.0 * alpha))
}

/// Decentralized law d = clip(α ω, d̲, d̄).
pub fn control_law(alpha: f64, omega: f64, bounds: Option<[f64; 2]>) -> f64 {
    let d = alpha * omega;
    match bounds {
        Some([lo, hi]) => d.clamp(lo, hi),
        None => d,
    }
}

/// Φ_j(ν) for the unsaturated quadratic cost, simplified to
/// −(α_j + D̂_j) ν²/2 + ν P_j^m.
pub fn dual_objective(bus: &Bus, nu: f64) -> f64 {
    -(bus.cost_coeff + bus.freq_damping) * nu * nu / 2.0 + nu * bus.power_step
}

/// d²/(2c) with 0/0 taken as 0 (a bus without that kind of load).
fn quadratic_term(load: f64, coeff: f64) -> f64 {
    if coeff == 0.0 && load == 0.0 {
        0.0
    } else {
        load * load / (2.0 * coeff)
    }
}

pub fn solve_olc(net: &PowerNetwork) -> Result<OlcSolution> {
    let total_damping: f64 = net.buses().iter().map(Bus::effective_damping).sum();
    if !(total_damping > 0.0) {
        return Err(Error::DegenerateOlc);
    }
    let total_step: f64 = net.buses().iter().map(|b| b.power_step).sum();
    let nu_star = total_step / total_damping;
    let d: Vec<f64> = net.buses().iter().map(|b| b.cost_coeff * nu_star).collect();
    let d_hat: Vec<f64> = net.buses().iter().map(|b| b.freq_damping * nu_star).collect();
    let objective = net
        .buses()
        .iter()
        .zip(d.iter().zip(&d_hat))
        .map(|(b, (&dj, &dh))| quadratic_term(dj, b.cost_coeff) + quadratic_term(dh, b.freq_damping))
        .sum();
    Ok(OlcSolution {
        nu_star,
        d,
        d_hat,
        objective,
    })
}
