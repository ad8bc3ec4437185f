//! Closed-loop state-space assembly.
//!
//! State layout is `u = [ω_G; P]`: generator frequencies followed by line
//! flows in line order. The decentralized law d_j = α_j ω_j is closed into
//! the damping, so `D_G` and `D_L` below are effective dampings D̂ + α.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::network::{incidence_matrices, line_weight, Bus, PowerNetwork};

/// Multiplicative noise entering through one stochastic line:
/// `σ_k B̄_k (C̄_k u + Ḡ_k) dξ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChannel {
    /// Position of the line in line order.
    pub line: usize,
    pub b_bar: DVector<f64>,
    pub c_bar: RowDVector<f64>,
    pub g_bar: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub n_g: usize,
    pub p: usize,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub channels: Vec<NoiseChannel>,
    pub u_star: DVector<f64>,
    pub inertia: DVector<f64>,
    pub damping_g: DVector<f64>,
    pub damping_l: DVector<f64>,
    pub e_g: DMatrix<f64>,
    pub e_l: DMatrix<f64>,
    /// Nominal line weights W⁰ (diagonal of the weight matrix).
    pub w0: DVector<f64>,
    pub p_g_m: DVector<f64>,
    pub p_l_m: DVector<f64>,
}

pub fn assemble(net: &PowerNetwork) -> Result<StateSpaceModel> {
    let (n_g, p) = (net.n_g(), net.p());
    let dim = n_g + p;
    let (e_g, e_l) = incidence_matrices(net);
    let index = net.bus_index();

    let gens = net.generators();
    let loads = net.loads();
    let inertia = DVector::from_iterator(n_g, gens.iter().map(|b| b.inertia.unwrap_or(f64::NAN)));
    let damping_g = DVector::from_iterator(n_g, gens.iter().map(Bus::effective_damping));
    let damping_l = DVector::from_iterator(loads.len(), loads.iter().map(Bus::effective_damping));
    if let Some(k) = damping_l.iter().position(|&d| d <= 0.0) {
        return Err(Error::LoadDampingSingular(loads[k].id));
    }
    let p_g_m = DVector::from_iterator(n_g, gens.iter().map(|b| b.power_step));
    let p_l_m = DVector::from_iterator(loads.len(), loads.iter().map(|b| b.power_step));

    let buses = net.buses();
    let mut w0 = DVector::zeros(p);
    for (k, l) in net.lines().iter().enumerate() {
        let (bi, bj) = (&buses[index[&l.from]], &buses[index[&l.to]]);
        w0[k] = line_weight(bi.voltage_mag * bj.voltage_mag, l.reactance, bi.phase0, bj.phase0).map_err(
            |e| match e {
                Error::InfeasibleAngle(dphase) => Error::NonPositiveWeight {
                    from: l.from,
                    to: l.to,
                    dphase,
                },
                other => other,
            },
        )?;
    }

    let inv_dl = damping_l.map(|d| 1.0 / d);
    let w = DMatrix::from_diagonal(&w0);
    // E_Lᵀ D_L⁻¹
    let el_t_dinv = e_l.transpose() * DMatrix::from_diagonal(&inv_dl);
    let flow_from_omega = &w * e_g.transpose();
    let flow_from_flow = -(&w * &el_t_dinv * &e_l);

    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..n_g {
        a[(i, i)] = -damping_g[i] / inertia[i];
        for k in 0..p {
            a[(i, n_g + k)] = -e_g[(i, k)] / inertia[i];
        }
    }
    a.view_mut((n_g, 0), (p, n_g)).copy_from(&flow_from_omega);
    a.view_mut((n_g, n_g), (p, p)).copy_from(&flow_from_flow);

    let flow_forcing = &w * &el_t_dinv * &p_l_m;
    let mut b = DVector::zeros(dim);
    for i in 0..n_g {
        b[i] = p_g_m[i] / inertia[i];
    }
    b.rows_mut(n_g, p).copy_from(&flow_forcing);

    let sigmas = net.noise_sigmas();
    let channels = net
        .stochastic_lines()
        .into_iter()
        .zip(sigmas)
        .map(|(line, sigma)| {
            let mut b_bar = DVector::zeros(dim);
            b_bar[n_g + line] = 1.0;
            let c_bar = a.row(n_g + line).into_owned();
            NoiseChannel {
                line,
                b_bar,
                c_bar,
                g_bar: flow_forcing[line],
                sigma,
            }
        })
        .collect();

    let u_star = compute_equilibrium(&a, &b)?;
    Ok(StateSpaceModel {
        n_g,
        p,
        a,
        b,
        channels,
        u_star,
        inertia,
        damping_g,
        damping_l,
        e_g,
        e_l,
        w0,
        p_g_m,
        p_l_m,
    })
}

/// Minimum-norm solution of `A u = −b` by truncated SVD with relative
/// tolerance `dim · ε · σ_max`. Fails when the residual shows `b ∉ range(A)`.
pub fn compute_equilibrium(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = a.nrows();
    if dim == 0 {
        return Ok(DVector::zeros(0));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = dim as f64 * f64::EPSILON * smax;
    let u = svd.solve(&(-b), tol).map_err(|_| Error::InconsistentForcing {
        residual: f64::NAN,
        tolerance: tol,
    })?;
    let residual = (a * &u + b).norm();
    let tolerance = 1e-9 * (1.0 + b.norm());
    if residual > tolerance {
        return Err(Error::InconsistentForcing { residual, tolerance });
    }
    Ok(u)
}

impl StateSpaceModel {
    pub fn dim(&self) -> usize {
        self.n_g + self.p
    }

    pub fn s(&self) -> usize {
        self.channels.len()
    }

    /// A u + b
    pub fn drift(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.a * u + &self.b
    }

    /// ω_L = D_L⁻¹ (P_L^m − E_L P) from the algebraic load-bus balance.
    pub fn load_frequencies(&self, u: &DVector<f64>) -> DVector<f64> {
        let flows = u.rows(self.n_g, self.p);
        let residual = &self.p_l_m - &self.e_l * flows;
        residual.component_div(&self.damping_l)
    }

    /// All bus frequencies in bus order (generators, then loads).
    pub fn bus_frequencies(&self, u: &DVector<f64>) -> DVector<f64> {
        let w_l = self.load_frequencies(u);
        DVector::from_iterator(
            self.n_g + w_l.len(),
            u.rows(0, self.n_g).iter().copied().chain(w_l.iter().copied()),
        )
    }

    /// Copy with every σ_k replaced by `sigma`.
    pub fn with_uniform_sigma(&self, sigma: f64) -> Self {
        let mut m = self.clone();
        for ch in m.channels.iter_mut() {
            ch.sigma = sigma;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::network::{BusKind, Line, Scenario};
    use crate::olc::solve_olc;
    use crate::testnet::{random_network, RandomNetworkSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_bus(stochastic: bool, pg: f64) -> PowerNetwork {
        let g = Bus {
            id: 1,
            kind: BusKind::Generator,
            inertia: Some(1.0),
            freq_damping: 1.0,
            cost_coeff: 0.0,
            load_bounds: None,
            power_step: pg,
            voltage_mag: 1.0,
            phase0: 0.0,
        };
        let l = Bus {
            id: 2,
            kind: BusKind::Load,
            inertia: None,
            freq_damping: 0.4,
            cost_coeff: 0.6,
            power_step: 0.0,
            ..g.clone()
        };
        let mut line = Line::new(1, 2, 0.1);
        line.stochastic = stochastic;
        PowerNetwork::new(vec![g, l], vec![line], Scenario::default()).unwrap()
    }

    #[test]
    fn two_bus_blocks() {
        let m = assemble(&two_bus(false, 0.0)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 30.0, -30.0]);
        assert!((&m.a - expected).amax() < 1e-12);
        assert_eq!(m.b, DVector::zeros(2));
        assert_eq!(m.u_star, DVector::zeros(2));
    }

    #[test]
    fn two_bus_injection() {
        let m = assemble(&two_bus(true, 0.0)).unwrap();
        assert_eq!(m.s(), 1);
        let ch = &m.channels[0];
        assert_eq!(ch.b_bar, DVector::from_vec(vec![0.0, 1.0]));
        assert!((&ch.c_bar - RowDVector::from_vec(vec![30.0, -30.0])).amax() < 1e-12);
        assert_eq!(ch.g_bar, 0.0);
    }

    #[test]
    fn two_bus_equilibrium_is_nu_star() {
        let net = two_bus(false, 0.2);
        let m = assemble(&net).unwrap();
        let nu = solve_olc(&net).unwrap().nu_star;
        assert!((nu - 0.1).abs() < 1e-15);
        assert!((m.u_star[0] - 0.1).abs() < 1e-12);
        // generator balance: D ω + P = P^m  → P = 0.2 − 0.1
        assert!((m.u_star[1] - 0.1).abs() < 1e-12);
        let w_l = m.load_frequencies(&m.u_star);
        assert!((w_l[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_bus_load_frequency_sign() {
        let m = assemble(&two_bus(false, 0.0)).unwrap();
        // Line (1,2) has its −1 at the load row, so ω_L = (0 − (−1)(0.2)) / 1.
        let u = DVector::from_vec(vec![0.0, 0.2]);
        assert!((m.load_frequencies(&u)[0] - 0.2).abs() < 1e-15);
        assert_eq!(m.load_frequencies(&DVector::zeros(2))[0], 0.0);
    }

    #[test]
    fn drift_examples() {
        let m = assemble(&two_bus(false, 0.2)).unwrap();
        assert!(m.drift(&m.u_star).amax() < 1e-12);
        assert_eq!(m.drift(&DVector::zeros(2)), m.b);
        let u1 = DVector::from_vec(vec![0.3, -0.7]);
        let u2 = DVector::from_vec(vec![-1.1, 0.4]);
        let lhs = m.drift(&(&u1 + &u2)) - m.drift(&u2);
        assert!((lhs - &m.a * &u1).amax() < 1e-12);
    }

    #[test]
    fn homogeneous_equilibrium_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(compute_equilibrium(&a, &DVector::zeros(2)).unwrap(), DVector::zeros(2));
        let inconsistent = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            compute_equilibrium(&a, &inconsistent),
            Err(Error::InconsistentForcing { .. })
        ));
    }

    /// Flow-block rows rebuilt one line at a time from
    /// Ṗ_ij = W_ij (ω_i − ω_j) with ω_L eliminated through the load balance.
    fn flow_rows_elementwise(net: &PowerNetwork) -> DMatrix<f64> {
        let (n_g, p) = (net.n_g(), net.p());
        let index = net.bus_index();
        let buses = net.buses();
        let mut rows = DMatrix::zeros(p, n_g + p);
        for (k, line) in net.lines().iter().enumerate() {
            let (bi, bj) = (&buses[index[&line.from]], &buses[index[&line.to]]);
            let w = 3.0 * bi.voltage_mag * bj.voltage_mag * (bi.phase0 - bj.phase0).cos() / line.reactance;
            for (bus, sign) in [(bi, 1.0), (bj, -1.0)] {
                if bus.is_generator() {
                    rows[(k, index[&bus.id])] += sign * w;
                } else {
                    // ω_j = (P_j^m − Σ_out P + Σ_in P) / (D̂_j + α_j)
                    let d = bus.freq_damping + bus.cost_coeff;
                    for (m, other) in net.lines().iter().enumerate() {
                        if other.from == bus.id {
                            rows[(k, n_g + m)] -= sign * w / d;
                        } else if other.to == bus.id {
                            rows[(k, n_g + m)] += sign * w / d;
                        }
                    }
                }
            }
        }
        rows
    }

    #[test]
    fn random_five_bus_flow_rows_match_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let params = RandomNetworkSpec { n_buses: 5..=5, ..RandomNetworkSpec::default() };
            let net = random_network(&mut rng, &params);
            let m = assemble(&net).unwrap();
            let rows = flow_rows_elementwise(&net);
            let block = m.a.rows(net.n_g(), net.p());
            assert!((block - &rows).amax() < 1e-10 * rows.amax());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn effective_damping_decomposition(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_network(&mut rng, &RandomNetworkSpec::default());
            let folded = net.map_buses(|b| { b.freq_damping += b.cost_coeff; b.cost_coeff = 0.0; }).unwrap();
            let (m1, m2) = (assemble(&net).unwrap(), assemble(&folded).unwrap());
            prop_assert!((&m1.a - &m2.a).amax() < 1e-12 * m1.a.amax());
            prop_assert!((&m1.b - &m2.b).amax() < 1e-12);
        }

        #[test]
        fn equilibrium_is_synchronized_at_nu_star(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_network(&mut rng, &RandomNetworkSpec::default());
            let m = assemble(&net).unwrap();
            let nu = solve_olc(&net).unwrap().nu_star;
            let freqs = m.bus_frequencies(&m.u_star);
            for w in freqs.iter() {
                prop_assert!((w - nu).abs() < 1e-9, "{} vs {}", w, nu);
            }
            prop_assert!(m.drift(&m.u_star).norm() <= 1e-9 * (1.0 + m.b.norm()));
        }

        #[test]
        fn drift_is_affine(seed in any::<u64>(), t in -2.0..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_network(&mut rng, &RandomNetworkSpec::default());
            let m = assemble(&net).unwrap();
            let u1 = DVector::from_fn(m.dim(), |i, _| (i as f64 * 0.37).sin());
            let u2 = DVector::from_fn(m.dim(), |i, _| (i as f64 * 1.3).cos());
            let mid = &u1 * (1.0 - t) + &u2 * t;
            let expect = m.drift(&u1) * (1.0 - t) + m.drift(&u2) * t;
            prop_assert!((m.drift(&mid) - expect).amax() < 1e-10 * (1.0 + m.a.amax()));
        }
    }
}
