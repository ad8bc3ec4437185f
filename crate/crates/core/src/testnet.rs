//! Random connected networks for property tests, acceptance batteries and
//! benchmarking. Parameter ranges default to desk-scale values.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::network::{Bus, BusKind, Line, PowerNetwork, Scenario};

#[derive(Debug, Clone)]
pub struct RandomNetworkSpec {
    pub n_buses: RangeInclusive<usize>,
    /// Upper bound on generators; at least one and at most `n − 1`.
    pub max_generators: usize,
    pub extra_lines: RangeInclusive<usize>,
    pub stochastic_lines: RangeInclusive<usize>,
    pub effective_damping: RangeInclusive<f64>,
    pub inertia: RangeInclusive<f64>,
    pub reactance: RangeInclusive<f64>,
    /// Nominal angles drawn from ±`phase_spread`.
    pub phase_spread: f64,
    pub power_step: RangeInclusive<f64>,
}

impl Default for RandomNetworkSpec {
    fn default() -> Self {
        RandomNetworkSpec {
            n_buses: 3..=8,
            max_generators: 3,
            extra_lines: 0..=2,
            stochastic_lines: 1..=3,
            effective_damping: 0.5..=6.0,
            inertia: 0.5..=5.0,
            reactance: 0.05..=0.5,
            phase_spread: 0.2,
            power_step: -0.3..=0.3,
        }
    }
}

pub fn random_network<R: Rng + ?Sized>(rng: &mut R, params: &RandomNetworkSpec) -> PowerNetwork {
    let n = rng.random_range(params.n_buses.clone()).max(2);
    let n_g = rng.random_range(1..=params.max_generators.clamp(1, n - 1));
    let buses: Vec<Bus> = (0..n)
        .map(|i| {
            let generator = i < n_g;
            let eff = rng.random_range(params.effective_damping.clone());
            let split = rng.random_range(0.0..=1.0);
            Bus {
                id: i as u32 + 1,
                kind: if generator { BusKind::Generator } else { BusKind::Load },
                inertia: generator.then(|| rng.random_range(params.inertia.clone())),
                freq_damping: eff * split,
                cost_coeff: eff * (1.0 - split),
                load_bounds: None,
                power_step: rng.random_range(params.power_step.clone()),
                voltage_mag: 1.0,
                phase0: if params.phase_spread > 0.0 {
                    rng.random_range(-params.phase_spread..=params.phase_spread)
                } else {
                    0.0
                },
            }
        })
        .collect();

    let mut order: Vec<u32> = (1..=n as u32).collect();
    order.shuffle(rng);
    let mut pairs = BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        pairs.insert((order[j], order[i]));
    }
    let extra = rng.random_range(params.extra_lines.clone());
    for _ in 0..extra * 4 {
        if pairs.len() >= n - 1 + extra {
            break;
        }
        let a = rng.random_range(1..=n as u32);
        let b = rng.random_range(1..=n as u32);
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.insert((a, b));
        }
    }
    let mut lines: Vec<Line> = pairs
        .into_iter()
        .map(|(a, b)| Line::new(a, b, rng.random_range(params.reactance.clone())))
        .collect();
    let s = rng.random_range(params.stochastic_lines.clone()).min(lines.len());
    let mut positions: Vec<usize> = (0..lines.len()).collect();
    positions.shuffle(rng);
    for &k in &positions[..s] {
        lines[k].stochastic = true;
    }
    PowerNetwork::new(buses, lines, Scenario::default()).expect("generator only builds valid networks")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn respects_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = RandomNetworkSpec::default();
        for _ in 0..200 {
            let net = random_network(&mut rng, &params);
            assert!((3..=8).contains(&net.n()));
            assert!((1..=3).contains(&net.s()));
            for b in net.buses() {
                assert!(params.effective_damping.contains(&b.effective_damping()) || (b.effective_damping() - 6.0).abs() < 1e-12);
            }
        }
    }
}
