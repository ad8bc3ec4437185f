//! Euler–Maruyama Monte Carlo for the full-order stochastic closed loop.
//!
//! Each path draws from its own ChaCha stream selected by `(seed, path)`.
//! Paths are grouped into fixed-size chunks whose partial sums are combined
//! in chunk order, so the statistics do not depend on how many threads ran.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{assemble, StateSpaceModel};
use crate::network::{Bus, PowerNetwork};
use crate::olc::control_law;

/// ‖v‖ above this marks a path diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e9;
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct StepDisturbance {
    pub time: f64,
    /// Bus id → ΔP^m.
    pub delta: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Common σ for every stochastic line, replacing per-line values.
    pub sigma_override: Option<f64>,
    pub step_disturbance: Option<StepDisturbance>,
    pub record_stride: usize,
    /// Honor load bounds through the clipped control law (nonlinear mode).
    pub saturation: bool,
    /// Added to u* to form the initial state.
    pub initial_deviation: Option<Vec<f64>>,
    /// When set, the ensemble also tracks E[‖P v‖²] (e.g. `P = Rᵀ` for
    /// the reduced coordinates).
    pub projection: Option<DMatrix<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_end: 30.0,
            n_paths: 1000,
            seed: 0,
            sigma_override: None,
            step_disturbance: None,
            record_stride: 10,
            saturation: false,
            initial_deviation: None,
            projection: None,
        }
    }
}

/// Ensemble statistics of the deviation `v = u − u*` from the equilibrium
/// in force at each time (it moves when the step disturbance fires).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    /// E[vᵀv]
    pub second_moment: Vec<f64>,
    /// Standard error of `second_moment` (normal approximation).
    pub second_moment_stderr: Vec<f64>,
    /// E[‖P v‖²] and its standard error, when a projection was configured.
    pub projected_second_moment: Option<Vec<f64>>,
    pub projected_stderr: Option<Vec<f64>>,
    /// Generator frequencies ω_G (absolute, not deviations).
    pub omega_mean: Vec<DVector<f64>>,
    pub omega_min: Vec<DVector<f64>>,
    pub omega_max: Vec<DVector<f64>>,
    /// Paths still finite at each record time.
    pub n_active: Vec<usize>,
    /// `(path, time)` for every diverged path, by path index.
    pub diverged: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PathTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Realized voltage-product samples per stochastic line at each record time.
    pub voltage: Vec<Vec<f64>>,
    pub diverged_at: Option<f64>,
}

/// One Itô Euler–Maruyama step of the linear model:
/// `u + (A u + b) dt + Σ σ_k B̄_k (C̄_k u + Ḡ_k) ΔW_k`.
pub fn em_step(model: &StateSpaceModel, u: &DVector<f64>, dt: f64, dw: &[f64]) -> DVector<f64> {
    let mut next = u + model.drift(u) * dt;
    for (ch, &w) in model.channels.iter().zip(dw) {
        let level = (&ch.c_bar * u)[0] + ch.g_bar;
        next += &ch.b_bar * (ch.sigma * level * w);
    }
    next
}

/// Per-step voltage-product sample `1 + σ ΔW / √dt`. White noise has no
/// pointwise value; this is the discretized signal normalized to unit
/// variance per step.
pub fn realized_voltage_product(sigma: f64, dw: f64, dt: f64) -> f64 {
    1.0 + sigma * dw / dt.sqrt()
}

struct Phase {
    model: StateSpaceModel,
    net: PowerNetwork,
}

pub struct Simulator {
    cfg: SimConfig,
    before: Phase,
    after: Option<(usize, Phase)>,
    n_steps: usize,
    warnings: Vec<String>,
}

impl Simulator {
    pub fn new(net: &PowerNetwork, cfg: SimConfig) -> Result<Self> {
        if !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) {
            return Err(Error::Config(format!("need dt > 0 and t_end > 0 (dt={}, t_end={})", cfg.dt, cfg.t_end)));
        }
        if cfg.n_paths == 0 || cfg.record_stride == 0 {
            return Err(Error::Config("n_paths and record_stride must be >= 1".into()));
        }
        let phase = |net: PowerNetwork| -> Result<Phase> {
            let mut model = assemble(&net)?;
            if let Some(s) = cfg.sigma_override {
                if !(s >= 0.0) {
                    return Err(Error::Config(format!("sigma override must be >= 0, got {s}")));
                }
                model = model.with_uniform_sigma(s);
            }
            Ok(Phase { model, net })
        };
        let before = phase(net.clone())?;
        let n_steps = (cfg.t_end / cfg.dt).round() as usize;

        if let Some(dev) = &cfg.initial_deviation {
            if dev.len() != before.model.dim() {
                return Err(Error::Dimension {
                    expected: before.model.dim(),
                    got: dev.len(),
                });
            }
        }
        if let Some(p) = &cfg.projection {
            if p.ncols() != before.model.dim() {
                return Err(Error::Dimension {
                    expected: before.model.dim(),
                    got: p.ncols(),
                });
            }
        }
        if cfg.saturation {
            if let Some(b) = net.loads().iter().find(|b| b.load_bounds.is_some() && b.freq_damping <= 0.0) {
                return Err(Error::Config(format!(
                    "saturation needs freq_damping > 0 at bounded load bus {}",
                    b.id
                )));
            }
        }

        let after = match &cfg.step_disturbance {
            None => None,
            Some(step) => {
                if let Some(id) = step.delta.keys().find(|id| net.bus(**id).is_none()) {
                    return Err(Error::Config(format!("step disturbance names unknown bus {id}")));
                }
                let stepped = net.map_buses(|b| {
                    if let Some(d) = step.delta.get(&b.id) {
                        b.power_step += d;
                    }
                })?;
                let at = (step.time / cfg.dt).round().max(0.0) as usize;
                Some((at, phase(stepped)?))
            }
        };

        let norm = before.model.a.clone().svd(false, false).singular_values.max();
        let ratio = cfg.dt * norm;
        if ratio > 2.0 {
            return Err(Error::Config(format!("dt·‖A‖ = {ratio:.3} exceeds 2.0; reduce dt")));
        }
        let mut warnings = Vec::new();
        if ratio > 0.5 {
            warnings.push(format!("dt·‖A‖ = {ratio:.3} exceeds 0.5; Euler–Maruyama may be inaccurate"));
        }
        Ok(Simulator {
            cfg,
            before,
            after,
            n_steps,
            warnings,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.before.model
    }

    /// Model in force after the step disturbance (the initial one if none).
    pub fn final_model(&self) -> &StateSpaceModel {
        self.after.as_ref().map_or(&self.before.model, |(_, p)| &p.model)
    }

    pub fn record_times(&self) -> Vec<f64> {
        self.record_steps().iter().map(|&k| k as f64 * self.cfg.dt).collect()
    }

    fn record_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..=self.n_steps).step_by(self.cfg.record_stride).collect();
        if *steps.last().unwrap() != self.n_steps {
            steps.push(self.n_steps);
        }
        steps
    }

    fn phase_at(&self, step: usize) -> &Phase {
        match &self.after {
            Some((at, p)) if step >= *at => p,
            _ => &self.before,
        }
    }

    fn initial_state(&self) -> DVector<f64> {
        let mut u = self.before.model.u_star.clone();
        if let Some(dev) = &self.cfg.initial_deviation {
            u += DVector::from_column_slice(dev);
        }
        u
    }

    /// Generic path driver; `visit(record_index, step, u, phase, dw)` runs at
    /// every record step. Returns the divergence time, if any.
    fn drive(&self, path: usize, mut visit: impl FnMut(usize, usize, &DVector<f64>, &Phase, &[f64])) -> Option<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(path as u64);
        let dim = self.before.model.dim();
        let s = self.before.model.s();
        let sqrt_dt = self.cfg.dt.sqrt();
        let records = self.record_steps();
        let mut next_record = 0;

        let mut u = self.initial_state();
        let mut drift = DVector::zeros(dim);
        let mut dw = vec![0.0; s];
        let mut kicks = vec![0.0; s];
        for step in 0..=self.n_steps {
            let phase = self.phase_at(step);
            for w in dw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = z * sqrt_dt;
            }
            if next_record < records.len() && records[next_record] == step {
                visit(next_record, step, &u, phase, &dw);
                next_record += 1;
            }
            if step == self.n_steps {
                break;
            }
            if self.cfg.saturation {
                self.nonlinear_step(&mut u, phase, &dw);
            } else {
                linear_step(&mut u, &mut drift, &mut kicks, &phase.model, self.cfg.dt, &dw);
            }
            let dev = (&u - &self.phase_at(step + 1).model.u_star).norm();
            if !dev.is_finite() || dev > DIVERGENCE_THRESHOLD {
                return Some((step + 1) as f64 * self.cfg.dt);
            }
        }
        None
    }

    fn nonlinear_step(&self, u: &mut DVector<f64>, phase: &Phase, dw: &[f64]) {
        let m = &phase.model;
        let net = &phase.net;
        let (n_g, p) = (m.n_g, m.p);
        let dt = self.cfg.dt;
        let flows = u.rows(n_g, p).into_owned();
        let mut omega = DVector::zeros(net.n());
        let e_g_p = &m.e_g * &flows;
        let e_l_p = &m.e_l * &flows;
        omega.rows_mut(0, n_g).copy_from(&u.rows(0, n_g));
        for (j, bus) in net.loads().iter().enumerate() {
            omega[n_g + j] = solve_load_frequency(bus, bus.power_step - e_l_p[j]);
        }
        let mut next = u.clone();
        for (j, bus) in net.generators().iter().enumerate() {
            let w = omega[j];
            let load = bus.freq_damping * w + control_law(bus.cost_coeff, w, bus.load_bounds);
            next[j] -= dt * (load + e_g_p[j] - bus.power_step) / m.inertia[j];
        }
        let e_t_omega = m.e_g.transpose() * omega.rows(0, n_g) + m.e_l.transpose() * omega.rows(n_g, net.n_l());
        let mut rate = m.w0.component_mul(&e_t_omega);
        let mut noise = DVector::zeros(p);
        for (ch, &w) in m.channels.iter().zip(dw) {
            noise[ch.line] += ch.sigma * rate[ch.line] * w;
        }
        rate *= dt;
        let mut flow_block = next.rows_mut(n_g, p);
        flow_block += rate + noise;
        *u = next;
    }

    pub fn run_path(&self, path: usize) -> PathTrace {
        let mut trace = PathTrace {
            times: Vec::new(),
            states: Vec::new(),
            voltage: Vec::new(),
            diverged_at: None,
        };
        let dt = self.cfg.dt;
        trace.diverged_at = self.drive(path, |_, step, u, phase, dw| {
            trace.times.push(step as f64 * dt);
            trace.states.push(u.clone());
            trace.voltage.push(
                phase
                    .model
                    .channels
                    .iter()
                    .zip(dw)
                    .map(|(ch, &w)| realized_voltage_product(ch.sigma, w, dt))
                    .collect(),
            );
        });
        trace
    }

    pub fn ensemble(&self) -> Result<EnsembleStats> {
        let n_chunks = self.cfg.n_paths.div_ceil(CHUNK);
        let run_chunk = |c: usize| -> ChunkAcc {
            let mut acc = ChunkAcc::new(self.record_steps().len(), self.before.model.dim(), self.before.model.n_g);
            let end = ((c + 1) * CHUNK).min(self.cfg.n_paths);
            for path in c * CHUNK..end {
                let diverged = self.drive(path, |r, _, u, phase, _| {
                    acc.add(r, u, &phase.model, self.cfg.projection.as_ref())
                });
                if let Some(t) = diverged {
                    acc.diverged.push((path, t));
                }
            }
            acc
        };

        #[cfg(feature = "parallel")]
        let chunks: Vec<ChunkAcc> = {
            use rayon::prelude::*;
            (0..n_chunks).into_par_iter().map(run_chunk).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let chunks: Vec<ChunkAcc> = (0..n_chunks).map(run_chunk).collect();

        let mut total = chunks
            .into_iter()
            .reduce(|mut a, b| {
                a.merge(b);
                a
            })
            .expect("at least one chunk");
        if total.diverged.len() == self.cfg.n_paths {
            let first = total.diverged.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
            let last = total.diverged.iter().map(|d| d.1).fold(0.0, f64::max);
            return Err(Error::AllDiverged {
                n_paths: self.cfg.n_paths,
                first,
                last,
            });
        }
        total.diverged.sort_by_key(|d| d.0);
        Ok(self.finish(total))
    }

    fn finish(&self, acc: ChunkAcc) -> EnsembleStats {
        let steps = self.record_steps();
        let n_g = self.before.model.n_g;
        let moments = |sum: &[f64], sum2: &[f64]| -> (Vec<f64>, Vec<f64>) {
            sum.iter()
                .zip(sum2)
                .zip(&acc.count)
                .map(|((&s1, &s2), &count)| {
                    let n = count as f64;
                    let m = s1 / n;
                    let var = if count > 1 {
                        ((s2 / n - m * m) * n / (n - 1.0)).max(0.0)
                    } else {
                        0.0
                    };
                    (m, (var / n).sqrt())
                })
                .unzip()
        };
        let (second_moment, second_moment_stderr) = moments(&acc.sum_sq, &acc.sum_sq2);
        let (projected, projected_err) = moments(&acc.sum_psq, &acc.sum_psq2);
        let has_projection = self.cfg.projection.is_some();
        let mut stats = EnsembleStats {
            times: steps.iter().map(|&k| k as f64 * self.cfg.dt).collect(),
            mean: Vec::new(),
            second_moment,
            second_moment_stderr,
            omega_mean: Vec::new(),
            projected_second_moment: has_projection.then_some(projected),
            projected_stderr: has_projection.then_some(projected_err),
            omega_min: acc.omega_min,
            omega_max: acc.omega_max,
            n_active: acc.count.clone(),
            diverged: acc.diverged,
            warnings: self.warnings.clone(),
        };
        for (r, &step) in steps.iter().enumerate() {
            let mean = &acc.sum_v[r] / acc.count[r] as f64;
            let u_star = &self.phase_at(step).model.u_star;
            stats.omega_mean.push(mean.rows(0, n_g) + u_star.rows(0, n_g));
            stats.mean.push(mean);
        }
        stats
    }
}

fn linear_step(
    u: &mut DVector<f64>,
    drift: &mut DVector<f64>,
    kicks: &mut [f64],
    model: &StateSpaceModel,
    dt: f64,
    dw: &[f64],
) {
    drift.copy_from(&model.b);
    drift.gemv(1.0, &model.a, u, 1.0);
    // Noise levels use the pre-step state.
    let n_g = model.n_g;
    for ((ch, &w), kick) in model.channels.iter().zip(dw).zip(kicks.iter_mut()) {
        let level: f64 = ch.c_bar.iter().zip(u.iter()).map(|(c, x)| c * x).sum::<f64>() + ch.g_bar;
        *kick = ch.sigma * level * w;
    }
    u.axpy(dt, drift, 1.0);
    for (ch, kick) in model.channels.iter().zip(kicks.iter()) {
        u[n_g + ch.line] += kick;
    }
}

/// Solves D̂ ω + clip(α ω, d̲, d̄) = r for a load bus.
fn solve_load_frequency(bus: &Bus, r: f64) -> f64 {
    let eff = bus.effective_damping();
    let w = r / eff;
    match bus.load_bounds {
        Some([_, hi]) if bus.cost_coeff * w > hi => (r - hi) / bus.freq_damping,
        Some([lo, _]) if bus.cost_coeff * w < lo => (r - lo) / bus.freq_damping,
        _ => w,
    }
}

struct ChunkAcc {
    sum_v: Vec<DVector<f64>>,
    sum_sq: Vec<f64>,
    sum_sq2: Vec<f64>,
    sum_psq: Vec<f64>,
    sum_psq2: Vec<f64>,
    count: Vec<usize>,
    omega_min: Vec<DVector<f64>>,
    omega_max: Vec<DVector<f64>>,
    diverged: Vec<(usize, f64)>,
}

impl ChunkAcc {
    fn new(records: usize, dim: usize, n_g: usize) -> Self {
        ChunkAcc {
            sum_v: vec![DVector::zeros(dim); records],
            sum_sq: vec![0.0; records],
            sum_sq2: vec![0.0; records],
            sum_psq: vec![0.0; records],
            sum_psq2: vec![0.0; records],
            count: vec![0; records],
            omega_min: vec![DVector::from_element(n_g, f64::INFINITY); records],
            omega_max: vec![DVector::from_element(n_g, f64::NEG_INFINITY); records],
            diverged: Vec::new(),
        }
    }

    fn add(&mut self, r: usize, u: &DVector<f64>, model: &StateSpaceModel, projection: Option<&DMatrix<f64>>) {
        let v = u - &model.u_star;
        let sq = v.norm_squared();
        if let Some(p) = projection {
            let psq = (p * &v).norm_squared();
            self.sum_psq[r] += psq;
            self.sum_psq2[r] += psq * psq;
        }
        self.sum_v[r] += &v;
        self.sum_sq[r] += sq;
        self.sum_sq2[r] += sq * sq;
        self.count[r] += 1;
        for j in 0..model.n_g {
            self.omega_min[r][j] = self.omega_min[r][j].min(u[j]);
            self.omega_max[r][j] = self.omega_max[r][j].max(u[j]);
        }
    }

    fn merge(&mut self, other: ChunkAcc) {
        for r in 0..self.count.len() {
            self.sum_v[r] += &other.sum_v[r];
            self.sum_sq[r] += other.sum_sq[r];
            self.sum_sq2[r] += other.sum_sq2[r];
            self.sum_psq[r] += other.sum_psq[r];
            self.sum_psq2[r] += other.sum_psq2[r];
            self.count[r] += other.count[r];
            self.omega_min[r] = self.omega_min[r].inf(&other.omega_min[r]);
            self.omega_max[r] = self.omega_max[r].sup(&other.omega_max[r]);
        }
        self.diverged.extend(other.diverged);
    }
}

pub fn simulate_ensemble(net: &PowerNetwork, cfg: SimConfig) -> Result<EnsembleStats> {
    Simulator::new(net, cfg)?.ensemble()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_equilibrium;
    use crate::network::{BusKind, Line, Scenario};
    use crate::olc::solve_olc;
    use crate::reduce::{reduce, ReduceOptions};
    use crate::stability::critical_variance;
    use crate::moments::{propagate_moments, MomentOptions};

    /// Generator (M = 1, D̂ = α = 0.5, P = 0.2) tied to a load (D̂ = α = 0.5)
    /// through x = 0.1, so A = [[−1, −1], [30, −30]] and b = [0.2, 0].
    fn two_bus(sigma: f64, bounds: Option<[f64; 2]>) -> PowerNetwork {
        let g = Bus {
            id: 1,
            kind: BusKind::Generator,
            inertia: Some(1.0),
            freq_damping: 0.5,
            cost_coeff: 0.5,
            load_bounds: None,
            power_step: 0.2,
            voltage_mag: 1.0,
            phase0: 0.0,
        };
        let l = Bus {
            id: 2,
            kind: BusKind::Load,
            inertia: None,
            load_bounds: bounds,
            power_step: 0.0,
            ..g.clone()
        };
        let mut line = Line::new(1, 2, 0.1);
        line.stochastic = true;
        line.sigma = sigma;
        PowerNetwork::new(vec![g, l], vec![line], Scenario::default()).unwrap()
    }

    fn cfg(n_paths: usize, t_end: f64) -> SimConfig {
        SimConfig {
            dt: 1e-3,
            t_end,
            n_paths,
            record_stride: 100,
            ..Default::default()
        }
    }

    #[test]
    fn em_step_by_hand() {
        let m = assemble(&two_bus(0.5, None)).unwrap();
        let u = DVector::from_vec(vec![0.1, 0.05]);
        // drift (0.05, 1.5); noise level 30·0.1 − 30·0.05 = 1.5; kick 0.5·1.5·0.2
        let next = em_step(&m, &u, 0.01, &[0.2]);
        assert!((next[0] - 0.1005).abs() < 1e-15);
        assert!((next[1] - 0.215).abs() < 1e-14);

        let (mut w, mut drift, mut kicks) = (u.clone(), DVector::zeros(2), vec![0.0]);
        linear_step(&mut w, &mut drift, &mut kicks, &m, 0.01, &[0.2]);
        assert!((&w - &next).amax() < 1e-15);
    }

    #[test]
    fn deterministic_path_follows_matrix_exponential() {
        let net = two_bus(0.0, None);
        let m = assemble(&net).unwrap();
        let dev = vec![0.3, -0.2];
        let sim = Simulator::new(
            &net,
            SimConfig {
                initial_deviation: Some(dev.clone()),
                ..cfg(1, 1.0)
            },
        )
        .unwrap();
        let trace = sim.run_path(0);
        let exact = &m.u_star + (m.a.clone() * 1.0).exp() * DVector::from_vec(dev);
        let last = trace.states.last().unwrap();
        // Euler error is O(dt).
        assert!((last - &exact).amax() < 2e-3 * exact.amax());
        assert_eq!(*trace.times.last().unwrap(), 1.0);
    }

    #[test]
    fn noise_free_run_settles_at_olc_frequency() {
        let net = two_bus(0.0, None);
        let nu = solve_olc(&net).unwrap().nu_star;
        assert!((nu - 0.1).abs() < 1e-15);
        let m = assemble(&net).unwrap();
        let stats = simulate_ensemble(
            &net,
            SimConfig {
                initial_deviation: Some((-&m.u_star).as_slice().to_vec()),
                ..cfg(1, 30.0)
            },
        )
        .unwrap();
        let last = stats.omega_mean.last().unwrap();
        assert!((last[0] - nu).abs() < 1e-6);
    }

    #[test]
    fn saturated_load_settles_at_clipped_balance() {
        // Load control pinned at 0.01: 0.2 = 1.5 ω + 0.01.
        let net = two_bus(0.0, Some([-0.01, 0.01]));
        let stats = simulate_ensemble(
            &net,
            SimConfig {
                saturation: true,
                initial_deviation: Some(vec![-0.1, 0.0]),
                ..cfg(1, 40.0)
            },
        )
        .unwrap();
        let w = stats.omega_mean.last().unwrap()[0];
        assert!((w - 0.19 / 1.5).abs() < 1e-6, "{w}");
    }

    #[test]
    fn nonlinear_mode_without_bounds_matches_linear_paths() {
        let net = two_bus(0.8, None);
        let base = SimConfig {
            initial_deviation: Some(vec![0.1, -0.05]),
            seed: 11,
            ..cfg(4, 3.0)
        };
        let lin = Simulator::new(&net, base.clone()).unwrap();
        let non = Simulator::new(&net, SimConfig { saturation: true, ..base }).unwrap();
        for path in 0..4 {
            let (a, b) = (lin.run_path(path), non.run_path(path));
            for (x, y) in a.states.iter().zip(&b.states) {
                assert!((x - y).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn step_moves_equilibrium() {
        let net = two_bus(0.0, None);
        let step = StepDisturbance {
            time: 1.0,
            delta: BTreeMap::from([(2, -0.1)]),
        };
        let sim = Simulator::new(
            &net,
            SimConfig {
                step_disturbance: Some(step),
                ..cfg(1, 40.0)
            },
        )
        .unwrap();
        // ν* = (0.2 − 0.1) / 2
        let post = sim.final_model();
        assert!((post.u_star[0] - 0.05).abs() < 1e-12);
        let u = compute_equilibrium(&post.a, &post.b).unwrap();
        assert!((&u - &post.u_star).amax() < 1e-12);
        let stats = sim.ensemble().unwrap();
        let before = stats.times.iter().position(|&t| t >= 0.99).unwrap();
        assert!((stats.omega_mean[before][0] - 0.1).abs() < 1e-9);
        assert!((stats.omega_mean.last().unwrap()[0] - 0.05).abs() < 1e-6);
        assert!(stats.second_moment.last().unwrap() < &1e-12);
    }

    #[test]
    fn unknown_step_bus_and_bad_dt_rejected() {
        let net = two_bus(0.1, None);
        let step = StepDisturbance {
            time: 1.0,
            delta: BTreeMap::from([(9, 0.1)]),
        };
        let bad = SimConfig {
            step_disturbance: Some(step),
            ..cfg(1, 1.0)
        };
        assert!(matches!(Simulator::new(&net, bad), Err(Error::Config(_))));
        // ‖A‖₂ ≈ 42, so dt = 0.1 is far past the stability limit.
        let coarse = SimConfig { dt: 0.1, ..cfg(1, 1.0) };
        assert!(matches!(Simulator::new(&net, coarse), Err(Error::Config(_))));
        let borderline = SimConfig { dt: 0.02, ..cfg(1, 1.0) };
        assert_eq!(Simulator::new(&net, borderline).unwrap().warnings.len(), 1);
        let short = SimConfig {
            initial_deviation: Some(vec![1.0]),
            ..cfg(1, 1.0)
        };
        assert!(matches!(Simulator::new(&net, short), Err(Error::Dimension { .. })));
    }

    #[test]
    fn saturation_requires_load_damping() {
        let net = two_bus(0.0, Some([-0.1, 0.1]))
            .map_buses(|b| {
                if b.id == 2 {
                    b.freq_damping = 0.0;
                }
            })
            .unwrap();
        let c = SimConfig { saturation: true, ..cfg(1, 1.0) };
        assert!(matches!(Simulator::new(&net, c), Err(Error::Config(_))));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn statistics_do_not_depend_on_thread_count() {
        let net = two_bus(1.0, None);
        let c = SimConfig {
            initial_deviation: Some(vec![0.2, 0.0]),
            seed: 5,
            ..cfg(70, 2.0)
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&net, c.clone()).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
        let other = simulate_ensemble(&net, SimConfig { seed: 6, ..c }).unwrap();
        assert_ne!(one.second_moment, other.second_moment);
    }

    #[test]
    fn all_paths_diverging_is_an_error() {
        let net = two_bus(0.0, None);
        let c = SimConfig {
            sigma_override: Some(60.0),
            initial_deviation: Some(vec![1.0, 0.0]),
            ..cfg(3, 30.0)
        };
        match simulate_ensemble(&net, c) {
            Err(Error::AllDiverged { n_paths, first, last }) => {
                assert_eq!(n_paths, 3);
                assert!(first <= last && last <= 30.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ensemble_second_moment_tracks_moment_equation() {
        let net = two_bus(0.0, None);
        let m = assemble(&net).unwrap();
        let red = reduce(&m, ReduceOptions::default()).unwrap();
        let sigma_sq = 0.5 * critical_variance(&red).unwrap();
        let v0 = DVector::from_vec(vec![0.2, 0.0]);
        let range = red.range_basis();
        let x0 = range.transpose() * &v0;
        let traj = propagate_moments(
            &red.with_uniform_sigma(sigma_sq.sqrt()),
            &x0,
            &(&x0 * x0.transpose()),
            &MomentOptions {
                t_end: 2.0,
                dt: Some(1e-3),
                record_every: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let stats = simulate_ensemble(
            &net,
            SimConfig {
                sigma_override: Some(sigma_sq.sqrt()),
                initial_deviation: Some(v0.as_slice().to_vec()),
                projection: Some(range.transpose()),
                seed: 3,
                ..cfg(4000, 2.0)
            },
        )
        .unwrap();
        let mc = stats.projected_second_moment.unwrap();
        let err = stats.projected_stderr.unwrap();
        let exact = traj.traces();
        assert_eq!(mc.len(), exact.len());
        for i in [5, 10, 15, 20] {
            assert!(
                (mc[i] - exact[i]).abs() < 4.0 * err[i] + 0.02 * exact[i],
                "t={} mc={} ode={} se={}",
                stats.times[i],
                mc[i],
                exact[i],
                err[i]
            );
        }
    }

    #[test]
    fn voltage_samples_have_unit_mean_and_sigma_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dt: f64 = 1e-3;
        let samples: Vec<f64> = (0..200_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                realized_voltage_product(0.3, z * dt.sqrt(), dt)
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 0.005);
        assert!((var.sqrt() - 0.3).abs() < 0.005);
    }
}
