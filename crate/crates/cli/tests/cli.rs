use std::path::PathBuf;
use std::process::{Command, Output};

fn gridmss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridmss"))
        .args(args)
        .output()
        .expect("spawn gridmss")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gridmss-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

const TWO_BUS: &str = r#"
[[buses]]
id = 1
kind = "generator"
inertia = 1.0
freq_damping = 0.5
cost_coeff = 0.5
power_step = 0.2
voltage_mag = 1.0
phase0 = 0.0

[[buses]]
id = 2
kind = "load"
freq_damping = 0.5
cost_coeff = 0.5
power_step = 0.0
voltage_mag = 1.0
phase0 = 0.0

[[lines]]
from = 1
to = 2
reactance = 0.1
stochastic = true
sigma = 0.1
"#;

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(out)).unwrap()
}

#[test]
fn olc_reports_common_frequency() {
    let path = scratch("two_bus_olc.toml", TWO_BUS);
    let v = json(&gridmss(&["olc", path.to_str().unwrap()]));
    assert!((v["nu_star"].as_f64().unwrap() - 0.1).abs() < 1e-15);
    let csv = stdout(&gridmss(&["olc", path.to_str().unwrap(), "--csv"]));
    assert_eq!(csv.lines().next(), Some("bus,d,d_hat"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn model_dumps_blocks() {
    let path = scratch("two_bus_model.toml", TWO_BUS);
    let out = stdout(&gridmss(&["model", path.to_str().unwrap()]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(&lines[..3], &["# A", "-1,-1", "30,-30"]);
    assert!(out.contains("# noise: line,sigma,g_bar,c_bar..."));
    assert!(out.contains("0,0.1,0,30,-30"));
}

#[test]
fn reduce_and_analyze_scalar_case() {
    let path = scratch("two_bus_analyze.toml", TWO_BUS);
    let p = path.to_str().unwrap();
    let r = json(&gridmss(&["reduce", p]));
    assert_eq!(r["dim_null"], 0);
    assert_eq!(r["dim_x"], 2);
    let a = json(&gridmss(&["analyze", p, "--sigma-sq", "0.001", "--sigma-sq", "1000"]));
    let star = a["sigma_star_sq"].as_f64().unwrap();
    assert!((star * a["rho"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(a["mss_at"][0][1], true);
    assert_eq!(a["mss_at"][1][1], false);
    let std = json(&gridmss(&["analyze", p, "--exponent-mode", "stddev"]));
    assert_eq!(std["exponent_mode"], "std-dev-times-rho");
    let csv = stdout(&gridmss(&["analyze", p, "--csv"]));
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn oracle_agrees_on_desk() {
    let v = json(&gridmss(&["oracle", "bundled:desk"]));
    assert_eq!(v["agree"], true);
}

#[test]
fn moments_series_decays_below_threshold() {
    let out = stdout(&gridmss(&["moments", "bundled:desk", "--sigma-sq", "0.05", "--t-end", "20"]));
    let rows: Vec<Vec<f64>> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!((rows[0][1] - 1.0).abs() < 1e-12);
    assert!(rows.last().unwrap()[1] < rows[0][1]);
    assert!(out.starts_with("time,trace_q,mu_0"));
}

#[test]
fn simulate_writes_statistics_and_path_dump() {
    let dump = std::env::temp_dir().join(format!("gridmss-path-{}.csv", std::process::id()));
    let out = stdout(&gridmss(&[
        "simulate",
        "bundled:desk",
        "--paths",
        "20",
        "--t-end",
        "1",
        "--sigma-sq",
        "0.05",
        "--kick",
        "0.1",
        "--dump-path",
        "3",
        "--path-out",
        dump.to_str().unwrap(),
    ]));
    let header = out.lines().next().unwrap();
    assert!(header.starts_with("time,n_active,mean_norm_sq,second_moment,second_moment_stderr,omega_mean_1"));
    assert_eq!(out.lines().count(), 1 + 11);
    let trace = std::fs::read_to_string(&dump).unwrap();
    assert!(trace.lines().next().unwrap().contains("vprod_discretized_1_2"));
}

#[test]
fn simulate_uses_scenario_step_by_default() {
    // Desk scenario: bus 6 drops 0.2 at t = 5.
    let out = stdout(&gridmss(&["simulate", "bundled:desk", "--paths", "1", "--t-end", "60", "--stride", "1000", "--sigma-sq", "0"]));
    let last: Vec<f64> = out.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    // ν* = (−0.1 − 0.2) / Σ(D̂ + α) = −0.3 / 16.8
    assert!((last[5] - (-0.3 / 16.8)).abs() < 1e-6, "{}", last[5]);
    let manual = stdout(&gridmss(&[
        "simulate", "bundled:desk", "--paths", "1", "--t-end", "60", "--stride", "1000", "--sigma-sq", "0",
        "--step-at", "5", "--step-delta", "6=-0.2",
    ]));
    assert_eq!(manual, out);
}

#[test]
fn sweeps_write_csv_and_json() {
    let out = scratch("cost.csv", "");
    stdout(&gridmss(&["sweep-cost", "bundled:desk", "--values", "1,0.5,2", "--csv", out.to_str().unwrap()]));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.contains("# kind=cost"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let sets = scratch("sets.toml", "sets = [[[1, 5]], [[1, 5], [2, 6]], [[1, 5], [2, 6], [4, 8]]]\n");
    let v = json(&gridmss(&["sweep-penetration", "bundled:desk", "--sets-file", sets.to_str().unwrap(), "--json", "--verify"]));
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert!(points.iter().all(|p| p["oracle_sigma_star_sq"].is_number()));
    assert_eq!(v["metadata"]["nested"], true);

    let bad = scratch("bad_sets.toml", "sets = [[[1, 5]], [[2, 6]]]\n");
    let o = gridmss(&["sweep-penetration", "bundled:desk", "--sets-file", bad.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not nested"));
}

#[test]
fn exit_codes() {
    let missing = gridmss(&["analyze", "/nonexistent/net.toml"]);
    assert_eq!(missing.status.code(), Some(1));

    let broken = scratch("broken.toml", &TWO_BUS.replace("reactance = 0.1", "reactance = \"x\""));
    let o = gridmss(&["analyze", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reactance"));

    // A 90° nominal angle difference leaves no positive line weight.
    let infeasible = scratch("angle.toml", &TWO_BUS.replacen("phase0 = 0.0", "phase0 = 1.6", 1));
    assert_eq!(gridmss(&["analyze", infeasible.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(gridmss(&["sweep-cost", "bundled:desk", "--values", "0"]).status.code(), Some(1));
    assert_eq!(gridmss(&["analyze", "bundled:nope"]).status.code(), Some(1));
}
