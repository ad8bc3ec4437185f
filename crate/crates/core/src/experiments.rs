//! Parameter sweeps: control cost α and stochastic-line penetration.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{assemble, StateSpaceModel};
use crate::moments::critical_variance_bisection;
use crate::network::PowerNetwork;
use crate::olc::solve_olc;
use crate::reduce::{reduce, ReduceOptions, ReducedModel};
use crate::stability::{analyze, ExponentMode, StabilityReport};

/// Relative agreement required between 1/ρ(Ĝ) and the bisection oracle.
pub const VERIFY_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// Each controllable bus gets α = value.
    #[default]
    Absolute,
    /// Each controllable bus gets α = value · (its nominal α).
    Scale,
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(AlphaMode::Absolute),
            "scale" => Ok(AlphaMode::Scale),
            other => Err(Error::Unknown {
                what: "alpha mode",
                name: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub exponent_mode: ExponentMode,
    /// Cross-check every point against the bisection oracle.
    pub verify: bool,
    pub reduce: ReduceOptions,
}

/// One sweep point. `rho` and `sigma_star_sq` are `None` when the
/// noise-free reduced drift is not Hurwitz at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// α (cost sweep) or number of stochastic lines (penetration sweep).
    pub value: f64,
    pub s: usize,
    pub dim_x: usize,
    pub rho: Option<f64>,
    pub sigma_star_sq: Option<f64>,
    pub nu_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_sigma_star_sq: Option<f64>,
}

impl SweepPoint {
    pub fn is_feasible(&self) -> bool {
        self.sigma_star_sq.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub kind: String,
    pub sweep_variable: String,
    pub units: String,
    pub network_hash: String,
    pub crate_version: String,
    pub exponent_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_mode: Option<AlphaMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub points: Vec<SweepPoint>,
}

/// Full pipeline for one network: assembly, reduction and the Ĝ analysis.
pub fn analyze_network(
    net: &PowerNetwork,
    mode: ExponentMode,
    opts: ReduceOptions,
) -> Result<(StateSpaceModel, ReducedModel, StabilityReport)> {
    let model = assemble(net)?;
    let red = reduce(&model, opts)?;
    let report = analyze(&red, &[], mode)?;
    Ok((model, red, report))
}

fn mode_name(mode: ExponentMode) -> String {
    match mode {
        ExponentMode::VarianceTimesRho => "variance".into(),
        ExponentMode::StdDevTimesRho => "stddev".into(),
    }
}

fn evaluate(net: &PowerNetwork, value: f64, opts: &SweepOptions) -> Result<SweepPoint> {
    let nu_star = solve_olc(net)?.nu_star;
    let model = assemble(net)?;
    let red = match reduce(&model, opts.reduce) {
        Ok(red) => red,
        Err(Error::ReducedDriftUnstable(_)) => {
            return Ok(SweepPoint {
                value,
                s: net.s(),
                dim_x: model.dim() - (net.p() + 1 - net.n()),
                rho: None,
                sigma_star_sq: None,
                nu_star,
                oracle_sigma_star_sq: None,
            })
        }
        Err(e) => return Err(e),
    };
    let report = analyze(&red, &[], opts.exponent_mode)?;
    let oracle_sigma_star_sq = if opts.verify && red.s() > 0 {
        let oracle = critical_variance_bisection(&red, VERIFY_REL_TOL * 1e-2)?;
        let closed = 1.0 / report.rho;
        if ((oracle - closed) / closed).abs() > VERIFY_REL_TOL {
            return Err(Error::Invariant(format!(
                "at {value}: 1/rho = {closed:.12e} but the moment oracle gives {oracle:.12e}"
            )));
        }
        Some(oracle)
    } else {
        None
    };
    Ok(SweepPoint {
        value,
        s: red.s(),
        dim_x: red.dim_x,
        rho: Some(report.rho),
        sigma_star_sq: Some(report.sigma_star_sq),
        nu_star,
        oracle_sigma_star_sq,
    })
}

fn sorted(mut points: Vec<SweepPoint>) -> Vec<SweepPoint> {
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    points
}

/// Sweeps α over the controllable buses (nominal α > 0); other buses keep α = 0.
pub fn sweep_cost(net: &PowerNetwork, alphas: &[f64], mode: AlphaMode, opts: SweepOptions) -> Result<SweepResult> {
    if let Some(&bad) = alphas.iter().find(|&&a| !(a > 0.0)) {
        return Err(Error::NonPositiveAlpha(bad));
    }
    if net.buses().iter().all(|b| b.cost_coeff <= 0.0) {
        return Err(Error::Config("network has no controllable bus (cost_coeff > 0)".into()));
    }
    let points = alphas
        .iter()
        .map(|&a| {
            let swept = net.map_buses(|b| {
                if b.cost_coeff > 0.0 {
                    b.cost_coeff = match mode {
                        AlphaMode::Absolute => a,
                        AlphaMode::Scale => a * b.cost_coeff,
                    };
                }
            })?;
            evaluate(&swept, a, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        metadata: SweepMetadata {
            kind: "cost".into(),
            sweep_variable: "alpha".into(),
            units: match mode {
                AlphaMode::Absolute => "p.u./(rad/s); cost coefficient is 1/alpha".into(),
                AlphaMode::Scale => "multiple of nominal alpha; cost coefficient is 1/alpha".into(),
            },
            network_hash: net.content_hash(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            exponent_mode: mode_name(opts.exponent_mode),
            alpha_mode: Some(mode),
            nested: None,
            warnings: Vec::new(),
        },
        points: sorted(points),
    })
}

/// Sweeps the stochastic set; each set lists line positions.
pub fn sweep_penetration(net: &PowerNetwork, sets: &[Vec<usize>], opts: SweepOptions) -> Result<SweepResult> {
    let points = sets
        .iter()
        .map(|set| {
            let swept = net.with_stochastic_lines(set)?;
            evaluate(&swept, swept.s() as f64, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let nested = is_nested(sets);
    let warnings = if nested {
        Vec::new()
    } else {
        vec!["line sets are not nested; the curve need not be monotone".to_string()]
    };
    Ok(SweepResult {
        metadata: SweepMetadata {
            kind: "penetration".into(),
            sweep_variable: "s".into(),
            units: "stochastic lines".into(),
            network_hash: net.content_hash(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            exponent_mode: mode_name(opts.exponent_mode),
            alpha_mode: None,
            nested: Some(nested),
            warnings,
        },
        points: sorted(points),
    })
}

/// Whether each set contains its predecessor.
pub fn is_nested(sets: &[Vec<usize>]) -> bool {
    sets.windows(2).all(|w| w[0].iter().all(|k| w[1].contains(k)))
}

/// Resolves `from-to` line names (either orientation) to line positions.
pub fn resolve_line_sets(net: &PowerNetwork, sets: &[Vec<(u32, u32)>]) -> Result<Vec<Vec<usize>>> {
    sets.iter()
        .map(|set| {
            set.iter()
                .map(|&(a, b)| {
                    net.line_position(a, b).ok_or_else(|| Error::Unknown {
                        what: "line",
                        name: format!("{a}-{b}"),
                    })
                })
                .collect()
        })
        .collect()
}

#[derive(Deserialize)]
struct SetsFile {
    sets: Vec<Vec<[u32; 2]>>,
}

/// Parses a TOML sets file: `sets = [[[1, 2], [2, 3]], [[1, 2]]]`.
pub fn parse_sets(text: &str) -> Result<Vec<Vec<(u32, u32)>>> {
    let file: SetsFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    Ok(file
        .sets
        .into_iter()
        .map(|s| s.into_iter().map(|[a, b]| (a, b)).collect())
        .collect())
}

/// Formats a float so that it parses back bit-exactly, with `inf` for ∞.
fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

const CSV_HEADER: &str = "value,s,dim_x,rho,sigma_star_sq,nu_star,oracle_sigma_star_sq";

impl SweepResult {
    pub fn infeasible_count(&self) -> usize {
        self.points.iter().filter(|p| !p.is_feasible()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// CSV with `# key=value` metadata lines ahead of the header.
    pub fn to_csv(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        writeln!(out, "# kind={}", m.kind).unwrap();
        writeln!(out, "# sweep_variable={}", m.sweep_variable).unwrap();
        writeln!(out, "# units={}", m.units).unwrap();
        writeln!(out, "# network_hash={}", m.network_hash).unwrap();
        writeln!(out, "# crate_version={}", m.crate_version).unwrap();
        writeln!(out, "# exponent_mode={}", m.exponent_mode).unwrap();
        if let Some(a) = m.alpha_mode {
            let name = match a {
                AlphaMode::Absolute => "absolute",
                AlphaMode::Scale => "scale",
            };
            writeln!(out, "# alpha_mode={name}").unwrap();
        }
        if let Some(n) = m.nested {
            writeln!(out, "# nested={n}").unwrap();
        }
        for w in &m.warnings {
            writeln!(out, "# warning={w}").unwrap();
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_f64(p.value),
                p.s,
                p.dim_x,
                opt(p.rho),
                opt(p.sigma_star_sq),
                fmt_f64(p.nu_star),
                opt(p.oracle_sigma_star_sq)
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = SweepMetadata {
            kind: String::new(),
            sweep_variable: String::new(),
            units: String::new(),
            warnings: Vec::new(),
            network_hash: String::new(),
            crate_version: String::new(),
            exponent_mode: String::new(),
            alpha_mode: None,
            nested: None,
        };
        let mut points = Vec::new();
        let bad = |line: &str| Error::Parse(format!("malformed sweep CSV line `{line}`"));
        let num = |s: &str, line: &str| s.parse::<f64>().map_err(|_| bad(line));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(line))?;
                match k {
                    "kind" => meta.kind = v.into(),
                    "sweep_variable" => meta.sweep_variable = v.into(),
                    "units" => meta.units = v.into(),
                    "warning" => meta.warnings.push(v.into()),
                    "network_hash" => meta.network_hash = v.into(),
                    "crate_version" => meta.crate_version = v.into(),
                    "exponent_mode" => meta.exponent_mode = v.into(),
                    "alpha_mode" => meta.alpha_mode = Some(v.parse()?),
                    "nested" => meta.nested = Some(v.parse().map_err(|_| bad(line))?),
                    _ => {}
                }
                continue;
            }
            if line == CSV_HEADER {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(line));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() { Ok(None) } else { num(s, line).map(Some) }
            };
            points.push(SweepPoint {
                value: num(f[0], line)?,
                s: f[1].parse().map_err(|_| bad(line))?,
                dim_x: f[2].parse().map_err(|_| bad(line))?,
                rho: opt(f[3])?,
                sigma_star_sq: opt(f[4])?,
                nu_star: num(f[5], line)?,
                oracle_sigma_star_sq: opt(f[6])?,
            });
        }
        Ok(SweepResult { metadata: meta, points })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn single_point_matches_direct_analysis() {
        let net = bundled::desk();
        let res = sweep_cost(&net, &[1.0], AlphaMode::Absolute, SweepOptions::default()).unwrap();
        let (_, _, report) = analyze_network(&net, ExponentMode::default(), ReduceOptions::default()).unwrap();
        assert_eq!(res.points.len(), 1);
        assert_eq!(res.points[0].rho, Some(report.rho));
        assert_eq!(res.points[0].sigma_star_sq, Some(report.sigma_star_sq));
        assert_eq!(res.points[0].s, 7);
    }

    #[test]
    fn scale_mode_multiplies_nominal_alpha() {
        let net = bundled::desk().map_buses(|b| b.cost_coeff *= 2.0).unwrap();
        let scaled = sweep_cost(&net, &[0.5], AlphaMode::Scale, SweepOptions::default()).unwrap();
        let direct = sweep_cost(&bundled::desk(), &[1.0], AlphaMode::Absolute, SweepOptions::default()).unwrap();
        assert_eq!(scaled.points[0].rho, direct.points[0].rho);
    }

    #[test]
    fn cost_sweep_rejects_bad_alpha_and_sorts() {
        let net = bundled::desk();
        assert!(matches!(
            sweep_cost(&net, &[1.0, 0.0], AlphaMode::Absolute, SweepOptions::default()),
            Err(Error::NonPositiveAlpha(_))
        ));
        let res = sweep_cost(&net, &[2.0, 0.5, 1.0], AlphaMode::Absolute, SweepOptions::default()).unwrap();
        let values: Vec<f64> = res.points.iter().map(|p| p.value).collect();
        assert_eq!(values, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn empty_set_is_unconditionally_stable() {
        let net = bundled::desk();
        let res = sweep_penetration(&net, &[vec![], vec![0]], SweepOptions::default()).unwrap();
        assert_eq!(res.points[0].sigma_star_sq, Some(f64::INFINITY));
        assert_eq!(res.points[0].rho, Some(0.0));
        assert!(res.points[1].sigma_star_sq.unwrap().is_finite());
        assert_eq!(res.metadata.nested, Some(true));
    }

    #[test]
    fn non_nested_sets_warn_but_compute() {
        let net = bundled::desk();
        let res = sweep_penetration(&net, &[vec![0], vec![1, 2]], SweepOptions::default()).unwrap();
        assert_eq!(res.metadata.nested, Some(false));
        assert_eq!(res.metadata.warnings.len(), 1);
        assert_eq!(res.points.len(), 2);
    }

    #[test]
    fn verify_mode_attaches_oracle() {
        let net = bundled::desk();
        let opts = SweepOptions {
            verify: true,
            ..Default::default()
        };
        let res = sweep_cost(&net, &[0.5, 5.0], AlphaMode::Absolute, opts).unwrap();
        for p in &res.points {
            let (closed, oracle) = (p.sigma_star_sq.unwrap(), p.oracle_sigma_star_sq.unwrap());
            assert!(((closed - oracle) / closed).abs() <= VERIFY_REL_TOL);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let net = bundled::desk();
        let mut res = sweep_cost(&net, &[0.3, 1.7, 9.1], AlphaMode::Absolute, SweepOptions::default()).unwrap();
        res.points.push(SweepPoint {
            value: 11.0,
            s: 7,
            dim_x: 13,
            rho: None,
            sigma_star_sq: None,
            nu_star: -1.0 / 3.0,
            oracle_sigma_star_sq: None,
        });
        res.points[0].oracle_sigma_star_sq = Some(0.1 + 0.2);
        res.metadata.warnings.push("note".into());
        let back = SweepResult::from_csv(&res.to_csv()).unwrap();
        assert_eq!(back, res);
        assert_eq!(res.infeasible_count(), 1);
        assert_eq!(SweepResult::from_json(&res.to_json()).unwrap(), res);

        let pen = sweep_penetration(&net, &[vec![]], SweepOptions::default()).unwrap();
        assert_eq!(SweepResult::from_csv(&pen.to_csv()).unwrap(), pen);
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let res = sweep_cost(&bundled::desk(), &[], AlphaMode::Absolute, SweepOptions::default()).unwrap();
        let csv = res.to_csv();
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec![CSV_HEADER]);
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(matches!(
            SweepResult::from_csv("value,s\n1,2,3\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn line_sets_resolve_either_orientation() {
        let net = bundled::desk();
        let sets = parse_sets("sets = [[[5, 1]], [[1, 5], [6, 2]]]").unwrap();
        let resolved = resolve_line_sets(&net, &sets).unwrap();
        assert_eq!(resolved[0], vec![net.line_position(1, 5).unwrap()]);
        assert!(is_nested(&resolved));
        let missing = parse_sets("sets = [[[1, 9]]]").unwrap();
        assert!(matches!(resolve_line_sets(&net, &missing), Err(Error::Unknown { .. })));
        assert!(matches!(parse_sets("sets = 3"), Err(Error::Schema(_))));
    }
}
