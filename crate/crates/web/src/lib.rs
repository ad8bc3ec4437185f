//! Browser demo over the bundled desk network: the α sweep, the
//! stochastic-line penetration sweep, and Monte Carlo frequency envelopes.
//!
//! The plain functions are host-testable; the `#[wasm_bindgen]` wrappers
//! only convert errors.

use gridmss::experiments::{sweep_cost, sweep_penetration, AlphaMode, SweepOptions};
use gridmss::sde::{SimConfig, Simulator};
use gridmss::{bundled, critical_variance, reduce, PowerNetwork, ReduceOptions};
use wasm_bindgen::prelude::*;

const MAX_PATHS: usize = 500;

fn desk() -> PowerNetwork {
    bundled::desk()
}

/// σ*² at each α (applied to every controllable bus).
pub fn cost_curve_points(alphas: &[f64]) -> Result<Vec<f64>, String> {
    let res = sweep_cost(&desk(), alphas, AlphaMode::Absolute, SweepOptions::default()).map_err(|e| e.to_string())?;
    // Output follows the input order, not the sorted sweep order.
    Ok(alphas
        .iter()
        .map(|a| {
            res.points
                .iter()
                .find(|p| p.value == *a)
                .and_then(|p| p.sigma_star_sq)
                .unwrap_or(f64::NAN)
        })
        .collect())
}

/// σ*² as the desk network's stochastic lines are switched on one by one.
pub fn penetration_points() -> Result<Vec<f64>, String> {
    let net = desk();
    let lines = net.stochastic_lines();
    let sets: Vec<Vec<usize>> = (1..=lines.len()).map(|k| lines[..k].to_vec()).collect();
    let res = sweep_penetration(&net, &sets, SweepOptions::default()).map_err(|e| e.to_string())?;
    Ok(res.points.iter().map(|p| p.sigma_star_sq.unwrap_or(f64::NAN)).collect())
}

/// Monte Carlo at `ratio · σ*²` with the desk scenario's load step.
///
/// Layout: `[σ*², n, times(n), mean(n), min(n), max(n)]` for the first
/// generator's frequency.
pub fn frequency_run(ratio: f64, paths: usize, t_end: f64, seed: u64) -> Result<Vec<f64>, String> {
    if !(ratio >= 0.0) {
        return Err(format!("variance ratio must be >= 0, got {ratio}"));
    }
    let net = desk();
    let model = gridmss::assemble(&net).map_err(|e| e.to_string())?;
    let red = reduce(&model, ReduceOptions::default()).map_err(|e| e.to_string())?;
    let star = critical_variance(&red).map_err(|e| e.to_string())?;
    let scenario = net.scenario();
    let step = scenario.power_step_time.map(|time| gridmss::sde::StepDisturbance {
        time,
        delta: scenario.power_step_delta.clone(),
    });
    let mut kick = vec![0.0; model.dim()];
    kick[0] = 0.02;
    let sim = Simulator::new(
        &net,
        SimConfig {
            dt: 1e-3,
            t_end,
            n_paths: paths.clamp(1, MAX_PATHS),
            seed,
            sigma_override: Some((ratio * star).sqrt()),
            step_disturbance: step,
            record_stride: 50,
            initial_deviation: Some(kick),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let stats = sim.ensemble().map_err(|e| e.to_string())?;
    let n = stats.times.len();
    let mut out = Vec::with_capacity(2 + 4 * n);
    out.push(star);
    out.push(n as f64);
    out.extend(&stats.times);
    out.extend(stats.omega_mean.iter().map(|w| w[0]));
    out.extend(stats.omega_min.iter().map(|w| w[0]));
    out.extend(stats.omega_max.iter().map(|w| w[0]));
    Ok(out)
}

#[wasm_bindgen]
pub fn cost_curve(alphas: Vec<f64>) -> Result<Vec<f64>, JsError> {
    cost_curve_points(&alphas).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn penetration_curve() -> Result<Vec<f64>, JsError> {
    penetration_points().map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn frequency_envelope(ratio: f64, paths: u32, t_end: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    frequency_run(ratio, paths as usize, t_end, seed as u64).map_err(|e| JsError::new(&e))
}
