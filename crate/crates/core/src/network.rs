//! Power-network description: buses, lines, the stochastic scenario, and the
//! document format they are read from.
//!
//! Buses are stored generators-first, each group sorted by id, so that the
//! generator rows of every assembled matrix come before the load rows. Lines
//! are sorted by `(min endpoint, max endpoint)`; that order fixes every flow
//! index downstream. A line's `from` endpoint is its `+1` incidence row.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// M_j, generator buses only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    /// Frequency-sensitive load coefficient D̂_j.
    pub freq_damping: f64,
    /// α_j; the controllable load follows d_j = α_j ω_j and costs d²/(2α_j).
    pub cost_coeff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_bounds: Option<[f64; 2]>,
    /// P_j^m
    pub power_step: f64,
    pub voltage_mag: f64,
    pub phase0: f64,
}

impl Bus {
    /// D̂_j + α_j, the total frequency feedback at the bus once the
    /// decentralized law is closed.
    pub fn effective_damping(&self) -> f64 {
        self.freq_damping + self.cost_coeff
    }

    pub fn is_generator(&self) -> bool {
        self.kind == BusKind::Generator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    pub reactance: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub stochastic: bool,
    /// Per-link noise standard deviation σ_k.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sigma: f64,
    /// Zero-based position among the stochastic lines; assigned on validation.
    #[serde(skip)]
    pub noise_index: Option<usize>,
}

impl Line {
    pub fn new(from: u32, to: u32, reactance: f64) -> Self {
        Line {
            from,
            to,
            reactance,
            stochastic: false,
            sigma: 0.0,
            noise_index: None,
        }
    }

    pub fn key(&self) -> (u32, u32) {
        (self.from.min(self.to), self.from.max(self.to))
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_step_time: Option<f64>,
    /// Bus id → ΔP^m applied at `power_step_time`.
    #[serde(
        default,
        skip_serializing_if = "BTreeMap::is_empty",
        with = "bus_map"
    )]
    pub power_step_delta: BTreeMap<u32, f64>,
}

mod bus_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, f64> = m.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        keyed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        let keyed = BTreeMap::<String, f64>::deserialize(d)?;
        keyed
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|id| (id, v))
                    .map_err(|_| D::Error::custom(format!("power_step_delta key `{k}` is not a bus id")))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    #[serde(default)]
    scenario: Scenario,
}

/// A validated network. Construct through [`PowerNetwork::new`] or
/// [`parse_network`]; every invariant holds for any value of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    scenario: Scenario,
    n_g: usize,
}

impl PowerNetwork {
    pub fn new(mut buses: Vec<Bus>, mut lines: Vec<Line>, scenario: Scenario) -> Result<Self> {
        buses.sort_by_key(|b| (b.kind != BusKind::Generator, b.id));
        let mut ids = BTreeSet::new();
        for b in &buses {
            if !ids.insert(b.id) {
                return Err(Error::Duplicate {
                    what: "bus id",
                    id: b.id.to_string(),
                });
            }
            validate_bus(b)?;
        }
        let n_g = buses.iter().filter(|b| b.is_generator()).count();
        if n_g == 0 {
            return Err(Error::Invariant("network needs at least one generator bus".into()));
        }

        lines.sort_by_key(Line::key);
        let mut pairs = BTreeSet::new();
        let mut next_noise = 0;
        for l in lines.iter_mut() {
            if l.from == l.to {
                return Err(Error::Invariant(format!("line ({}, {}) is a self-loop", l.from, l.to)));
            }
            for end in [l.from, l.to] {
                if !ids.contains(&end) {
                    return Err(Error::Invariant(format!(
                        "line ({}, {}) references unknown bus {end}",
                        l.from, l.to
                    )));
                }
            }
            if !pairs.insert(l.key()) {
                return Err(Error::Duplicate {
                    what: "line",
                    id: format!("({}, {})", l.from, l.to),
                });
            }
            if !(l.reactance > 0.0) {
                return Err(Error::Invariant(format!(
                    "line ({}, {}) reactance must be > 0, got {}",
                    l.from, l.to, l.reactance
                )));
            }
            if !(l.sigma >= 0.0) {
                return Err(Error::Invariant(format!(
                    "line ({}, {}) sigma must be >= 0, got {}",
                    l.from, l.to, l.sigma
                )));
            }
            l.noise_index = if l.stochastic {
                next_noise += 1;
                Some(next_noise - 1)
            } else {
                None
            };
        }

        if let Some(s) = scenario.global_sigma {
            if !(s >= 0.0) {
                return Err(Error::Invariant(format!("global_sigma must be >= 0, got {s}")));
            }
        }
        for id in scenario.power_step_delta.keys() {
            if !ids.contains(id) {
                return Err(Error::Invariant(format!("power_step_delta names unknown bus {id}")));
            }
        }

        let net = PowerNetwork {
            buses,
            lines,
            scenario,
            n_g,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<()> {
        let index = self.bus_index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            let (i, j) = (index[&l.from], index[&l.to]);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(k) => Err(Error::Disconnected(self.buses[k].id, self.buses[0].id)),
            None => Ok(()),
        }
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn into_parts(self) -> (Vec<Bus>, Vec<Line>, Scenario) {
        (self.buses, self.lines, self.scenario)
    }

    pub fn generators(&self) -> &[Bus] {
        &self.buses[..self.n_g]
    }

    pub fn loads(&self) -> &[Bus] {
        &self.buses[self.n_g..]
    }

    pub fn n_g(&self) -> usize {
        self.n_g
    }

    pub fn n_l(&self) -> usize {
        self.buses.len() - self.n_g
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn p(&self) -> usize {
        self.lines.len()
    }

    /// Number of stochastic lines.
    pub fn s(&self) -> usize {
        self.lines.iter().filter(|l| l.stochastic).count()
    }

    /// Positions (in line order) of the stochastic lines, indexed by noise index.
    pub fn stochastic_lines(&self) -> Vec<usize> {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.stochastic)
            .map(|(i, _)| i)
            .collect()
    }

    /// Bus id → row in the stacked `[generators; loads]` ordering.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Position of the line joining `a` and `b` (either orientation).
    pub fn line_position(&self, a: u32, b: u32) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.lines.binary_search_by_key(&key, Line::key).ok()
    }

    /// Per-link noise standard deviations σ_k in noise-index order; the
    /// scenario's `global_sigma` overrides per-line values when present.
    pub fn noise_sigmas(&self) -> Vec<f64> {
        self.lines
            .iter()
            .filter(|l| l.stochastic)
            .map(|l| self.scenario.global_sigma.unwrap_or(l.sigma))
            .collect()
    }

    /// Copy with `f` applied to every bus, revalidated.
    pub fn map_buses(&self, f: impl FnMut(&mut Bus)) -> Result<Self> {
        let (mut buses, lines, scenario) = self.clone().into_parts();
        buses.iter_mut().for_each(f);
        PowerNetwork::new(buses, lines, scenario)
    }

    /// Copy whose stochastic set is exactly `positions` (line positions).
    pub fn with_stochastic_lines(&self, positions: &[usize]) -> Result<Self> {
        let set: BTreeSet<usize> = positions.iter().copied().collect();
        if let Some(&bad) = set.iter().find(|&&k| k >= self.lines.len()) {
            return Err(Error::Invariant(format!("line position {bad} out of range")));
        }
        let (buses, mut lines, scenario) = self.clone().into_parts();
        for (i, l) in lines.iter_mut().enumerate() {
            l.stochastic = set.contains(&i);
        }
        PowerNetwork::new(buses, lines, scenario)
    }

    /// Copy with the scenario's step disturbance folded into `power_step`.
    pub fn with_step_applied(&self) -> Self {
        let mut net = self.clone();
        for b in net.buses.iter_mut() {
            if let Some(d) = net.scenario.power_step_delta.get(&b.id) {
                b.power_step += d;
            }
        }
        net
    }

    pub fn to_toml(&self) -> String {
        let doc = Document {
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            scenario: self.scenario.clone(),
        };
        toml::to_string(&doc).expect("network document always serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn validate_bus(b: &Bus) -> Result<()> {
    let fail = |msg: String| Err(Error::Invariant(format!("bus {}: {msg}", b.id)));
    match (b.kind, b.inertia) {
        (BusKind::Generator, Some(m)) if m > 0.0 => {}
        (BusKind::Generator, Some(m)) => return fail(format!("inertia must be > 0, got {m}")),
        (BusKind::Generator, None) => return fail("generator bus requires `inertia`".into()),
        (BusKind::Load, Some(_)) => return fail("load bus must not carry `inertia`".into()),
        (BusKind::Load, None) => {}
    }
    if !(b.freq_damping >= 0.0) {
        return fail(format!("freq_damping must be >= 0, got {}", b.freq_damping));
    }
    if !(b.cost_coeff >= 0.0) {
        return fail(format!("cost_coeff must be >= 0, got {}", b.cost_coeff));
    }
    if b.kind == BusKind::Load && b.effective_damping() <= 0.0 {
        return Err(Error::LoadDampingSingular(b.id));
    }
    if let Some([lo, hi]) = b.load_bounds {
        if !(lo <= 0.0 && 0.0 <= hi) {
            return fail(format!("load_bounds must satisfy lo <= 0 <= hi, got [{lo}, {hi}]"));
        }
    }
    if !(b.voltage_mag > 0.0) {
        return fail(format!("voltage_mag must be > 0, got {}", b.voltage_mag));
    }
    if !b.power_step.is_finite() || !b.phase0.is_finite() {
        return fail("power_step and phase0 must be finite".into());
    }
    Ok(())
}

/// Parses and validates a network document (TOML).
pub fn parse_network(text: &str) -> Result<PowerNetwork> {
    let doc: Document = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    PowerNetwork::new(doc.buses, doc.lines, doc.scenario)
}

/// W_ij = 3 |V_i||V_j| cos(θ_i − θ_j) / X_ij.
pub fn line_weight(vprod: f64, reactance: f64, phase_i: f64, phase_j: f64) -> Result<f64> {
    if !(reactance > 0.0) {
        return Err(Error::NonPositiveReactance(reactance));
    }
    let c = (phase_i - phase_j).cos();
    // cos(π/2) evaluates to ~6e-17, not 0.
    if c <= 1e-12 {
        return Err(Error::InfeasibleAngle(phase_i - phase_j));
    }
    Ok(3.0 * vprod * c / reactance)
}

/// Signed node-line incidence split into generator rows `E_G` and load rows `E_L`.
pub fn incidence_matrices(net: &PowerNetwork) -> (DMatrix<f64>, DMatrix<f64>) {
    let index = net.bus_index();
    let mut e = DMatrix::zeros(net.n(), net.p());
    for (k, l) in net.lines().iter().enumerate() {
        e[(index[&l.from], k)] = 1.0;
        e[(index[&l.to], k)] = -1.0;
    }
    let e_g = e.rows(0, net.n_g()).into_owned();
    let e_l = e.rows(net.n_g(), net.n_l()).into_owned();
    (e_g, e_l)
}
