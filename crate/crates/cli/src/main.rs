use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use gridmss::experiments::{
    analyze_network, parse_sets, resolve_line_sets, sweep_cost, sweep_penetration, AlphaMode, SweepOptions,
    SweepResult,
};
use gridmss::moments::{critical_variance_bisection, propagate_moments, MomentOptions};
use gridmss::reduce::ReduceOptions;
use gridmss::sde::{SimConfig, Simulator, StepDisturbance};
use gridmss::{assemble, bundled, reduce, solve_olc, Error, ExponentMode, PowerNetwork};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gridmss", version, about = "Mean-square stability of load-side frequency control")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct NetArg {
    /// Network TOML file, or `bundled:<name>` (desk, ring68).
    network: String,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form optimal load control: ν*, d, d̂ and the objective.
    Olc {
        #[command(flatten)]
        net: NetArg,
        #[arg(long)]
        csv: bool,
    },
    /// Dump A, b and the noise injection rows as CSV blocks.
    Model {
        #[command(flatten)]
        net: NetArg,
    },
    /// Null-space reduction summary.
    Reduce {
        #[command(flatten)]
        net: NetArg,
        #[arg(long)]
        rtol: Option<f64>,
    },
    /// Ĝ, ρ(Ĝ), σ*² and verdicts at the queried variances.
    Analyze {
        #[command(flatten)]
        net: NetArg,
        #[arg(long = "sigma-sq")]
        sigma_sq: Vec<f64>,
        #[arg(long, default_value = "variance")]
        exponent_mode: ExponentMode,
        /// Emit Ĝ as CSV instead of the JSON report.
        #[arg(long)]
        csv: bool,
    },
    /// Mean and covariance ODE in reduced coordinates; CSV time series.
    Moments {
        #[command(flatten)]
        net: NetArg,
        #[arg(long = "sigma-sq")]
        sigma_sq: f64,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Bisection of the vectorized generator against 1/ρ(Ĝ).
    Oracle {
        #[command(flatten)]
        net: NetArg,
    },
    /// Euler–Maruyama Monte Carlo; CSV ensemble statistics.
    Simulate(SimulateArgs),
    /// σ*² against the control-cost parameter α.
    SweepCost {
        #[command(flatten)]
        net: NetArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "absolute")]
        alpha_mode: AlphaMode,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// σ*² against nested sets of stochastic lines.
    SweepPenetration {
        #[command(flatten)]
        net: NetArg,
        /// TOML file with `sets = [[[from, to], ...], ...]`.
        #[arg(long)]
        sets_file: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Cross-check each point against the bisection oracle.
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value = "variance")]
    exponent_mode: ExponentMode,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetArg,
    /// Common noise variance for every stochastic line.
    #[arg(long = "sigma-sq")]
    sigma_sq: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 30.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record every n-th step.
    #[arg(long, default_value_t = 100)]
    stride: usize,
    /// Time of the power step (defaults to the network scenario).
    #[arg(long)]
    step_at: Option<f64>,
    /// `bus=delta`, repeatable (defaults to the network scenario).
    #[arg(long = "step-delta", value_parser = parse_step)]
    step_delta: Vec<(u32, f64)>,
    /// Simulate the clipped control law (honors load bounds).
    #[arg(long)]
    saturation: bool,
    /// Initial deviation added to the first generator frequency.
    #[arg(long, default_value_t = 0.0)]
    kick: f64,
    /// Also write the trace of this path to `--path-out`.
    #[arg(long, requires = "path_out")]
    dump_path: Option<usize>,
    #[arg(long)]
    path_out: Option<PathBuf>,
    /// Write statistics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_step(s: &str) -> Result<(u32, f64), String> {
    let (bus, delta) = s.split_once('=').ok_or_else(|| format!("expected bus=delta, got `{s}`"))?;
    let bus = bus.trim().parse().map_err(|_| format!("bad bus id `{bus}`"))?;
    let delta = delta.trim().parse().map_err(|_| format!("bad delta `{delta}`"))?;
    Ok((bus, delta))
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(String),
    Infeasible(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(m) | Failure::Infeasible(m) => f.write_str(m),
        }
    }
}

/// Exit 2 when the network itself admits no stable operating point.
fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Infeasible(_)
        | Failure::Core(
            Error::ReducedDriftUnstable(_)
            | Error::NonPositiveWeight { .. }
            | Error::InfeasibleAngle(_)
            | Error::InconsistentForcing { .. }
            | Error::DegenerateOlc
            | Error::AllDiverged { .. },
        ) => 2,
        _ => 1,
    }
}

fn load(arg: &NetArg) -> Result<PowerNetwork, Failure> {
    if let Some(name) = arg.network.strip_prefix("bundled:") {
        return Ok(bundled::by_name(name)?);
    }
    let text = read(Path::new(&arg.network))?;
    Ok(gridmss::parse_network(&text)?)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() { json!(x) } else { json!(x.to_string()) }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Olc { net, csv } => {
            let net = load(&net)?;
            let sol = solve_olc(&net)?;
            if csv {
                let mut out = String::from("bus,d,d_hat\n");
                for (b, (d, dh)) in net.buses().iter().zip(sol.d.iter().zip(&sol.d_hat)) {
                    writeln!(out, "{},{d},{dh}", b.id).unwrap();
                }
                print!("{out}");
            } else {
                println!("{}", serde_json::to_string_pretty(&sol).unwrap());
            }
        }
        Command::Model { net } => {
            let m = assemble(&load(&net)?)?;
            let mut out = String::from("# A\n");
            for r in m.a.row_iter() {
                out.push_str(&join(r.iter()));
            }
            out.push_str("# b\n");
            out.push_str(&join(m.b.iter()));
            out.push_str("# u_star\n");
            out.push_str(&join(m.u_star.iter()));
            out.push_str("# noise: line,sigma,g_bar,c_bar...\n");
            for ch in &m.channels {
                let head = [ch.line as f64, ch.sigma, ch.g_bar];
                out.push_str(&join(head.iter().chain(ch.c_bar.iter())));
            }
            print!("{out}");
        }
        Command::Reduce { net, rtol } => {
            let m = assemble(&load(&net)?)?;
            let red = reduce(&m, ReduceOptions { rtol })?;
            let v = json!({
                "dim": m.dim(),
                "dim_null": red.dim_null,
                "dim_x": red.dim_x,
                "spectral_abscissa": red.spectral_abscissa(),
                "s": red.s(),
            });
            println!("{}", serde_json::to_string_pretty(&v).unwrap());
        }
        Command::Analyze {
            net,
            sigma_sq,
            exponent_mode,
            csv,
        } => {
            let net = load(&net)?;
            let (_, red, _) = analyze_network(&net, exponent_mode, ReduceOptions::default())?;
            let report = gridmss::analyze(&red, &sigma_sq, exponent_mode)?;
            if csv {
                let mut out = String::new();
                for r in report.ghat.row_iter() {
                    out.push_str(&join(r.iter()));
                }
                print!("{out}");
            } else {
                let mut v = serde_json::to_value(&report).unwrap();
                v["sigma_star_sq"] = json_f64(report.sigma_star_sq);
                println!("{}", serde_json::to_string_pretty(&v).unwrap());
            }
        }
        Command::Moments {
            net,
            sigma_sq,
            t_end,
            dt,
        } => {
            if sigma_sq < 0.0 {
                return Err(Error::NegativeVariance(sigma_sq).into());
            }
            let m = assemble(&load(&net)?)?;
            let red = reduce(&m, ReduceOptions::default())?.with_uniform_sigma(sigma_sq.sqrt());
            let n = red.dim_x;
            let mu0 = unit_mean(n);
            let q0 = &mu0 * mu0.transpose();
            let traj = propagate_moments(
                &red,
                &mu0,
                &q0,
                &MomentOptions {
                    t_end,
                    dt,
                    ..Default::default()
                },
            )?;
            let mut out = String::from("time,trace_q");
            for i in 0..n {
                write!(out, ",mu_{i}").unwrap();
            }
            out.push('\n');
            for ((t, q), mu) in traj.times.iter().zip(&traj.cov).zip(&traj.mean) {
                write!(out, "{t},{}", q.trace()).unwrap();
                for x in mu.iter() {
                    write!(out, ",{x}").unwrap();
                }
                out.push('\n');
            }
            print!("{out}");
        }
        Command::Oracle { net } => {
            let net = load(&net)?;
            let (_, red, report) = analyze_network(&net, ExponentMode::default(), ReduceOptions::default())?;
            let oracle = critical_variance_bisection(&red, 1e-9)?;
            let closed = report.sigma_star_sq;
            let rel = if closed.is_finite() { ((oracle - closed) / closed).abs() } else { 0.0 };
            let v = json!({
                "sigma_star_sq": json_f64(closed),
                "oracle_sigma_star_sq": json_f64(oracle),
                "relative_difference": rel,
                "agree": rel <= gridmss::experiments::VERIFY_REL_TOL,
            });
            println!("{}", serde_json::to_string_pretty(&v).unwrap());
        }
        Command::Simulate(args) => simulate(args)?,
        Command::SweepCost {
            net,
            values,
            alpha_mode,
            sweep,
        } => {
            let net = load(&net)?;
            let res = sweep_cost(&net, &values, alpha_mode, sweep_opts(&sweep))?;
            finish_sweep(&res, &sweep)?;
        }
        Command::SweepPenetration { net, sets_file, sweep } => {
            let net = load(&net)?;
            let named = parse_sets(&read(&sets_file)?)?;
            let sets = resolve_line_sets(&net, &named)?;
            let res = sweep_penetration(&net, &sets, sweep_opts(&sweep))?;
            for w in &res.metadata.warnings {
                eprintln!("warning: {w}");
            }
            finish_sweep(&res, &sweep)?;
        }
    }
    Ok(())
}

fn unit_mean(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / (n as f64).sqrt())
}

fn join<'a>(xs: impl Iterator<Item = &'a f64>) -> String {
    // `+ 0.0` folds −0 into 0.
    let mut line = xs.map(|x| (x + 0.0).to_string()).collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

fn sweep_opts(a: &SweepArgs) -> SweepOptions {
    SweepOptions {
        exponent_mode: a.exponent_mode,
        verify: a.verify,
        reduce: ReduceOptions::default(),
    }
}

fn finish_sweep(res: &SweepResult, a: &SweepArgs) -> Result<(), Failure> {
    if a.json {
        println!("{}", res.to_json());
    } else {
        emit(&res.to_csv(), a.csv.as_deref())?;
    }
    match res.infeasible_count() {
        0 => Ok(()),
        k => Err(Failure::Infeasible(format!("{k} sweep point(s) have an unstable noise-free drift"))),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let net = load(&args.net)?;
    let scenario = net.scenario();
    let delta: BTreeMap<u32, f64> = if args.step_delta.is_empty() {
        scenario.power_step_delta.clone()
    } else {
        args.step_delta.iter().copied().collect()
    };
    let step_time = args.step_at.or(scenario.power_step_time);
    let step_disturbance = match step_time {
        Some(time) if !delta.is_empty() => Some(StepDisturbance { time, delta }),
        _ => None,
    };
    let sigma_override = match args.sigma_sq {
        Some(v) if v < 0.0 => return Err(Error::NegativeVariance(v).into()),
        Some(v) => Some(v.sqrt()),
        None => None,
    };
    let dim = net.n_g() + net.p();
    let initial_deviation = (args.kick != 0.0).then(|| {
        let mut d = vec![0.0; dim];
        d[0] = args.kick;
        d
    });
    let sim = Simulator::new(
        &net,
        SimConfig {
            dt: args.dt,
            t_end: args.t_end,
            n_paths: args.paths,
            seed: args.seed,
            sigma_override,
            step_disturbance,
            record_stride: args.stride,
            saturation: args.saturation,
            initial_deviation,
            projection: None,
        },
    )?;
    let stats = sim.ensemble()?;
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    if !stats.diverged.is_empty() {
        eprintln!("warning: {} of {} paths diverged", stats.diverged.len(), args.paths);
    }

    let gens: Vec<u32> = net.generators().iter().map(|b| b.id).collect();
    let mut out = String::from("time,n_active,mean_norm_sq,second_moment,second_moment_stderr");
    for id in &gens {
        write!(out, ",omega_mean_{id},omega_min_{id},omega_max_{id}").unwrap();
    }
    out.push('\n');
    for r in 0..stats.times.len() {
        write!(
            out,
            "{:?},{},{:?},{:?},{:?}",
            stats.times[r],
            stats.n_active[r],
            stats.mean[r].norm_squared(),
            stats.second_moment[r],
            stats.second_moment_stderr[r]
        )
        .unwrap();
        for j in 0..gens.len() {
            write!(
                out,
                ",{:?},{:?},{:?}",
                stats.omega_mean[r][j], stats.omega_min[r][j], stats.omega_max[r][j]
            )
            .unwrap();
        }
        out.push('\n');
    }
    emit(&out, args.out.as_deref())?;

    if let (Some(k), Some(path)) = (args.dump_path, args.path_out.as_deref()) {
        if k >= args.paths {
            return Err(Failure::Io(format!("--dump-path {k} is out of range for {} paths", args.paths)));
        }
        let trace = sim.run_path(k);
        let mut out = String::from("time");
        for i in 0..dim {
            write!(out, ",u_{i}").unwrap();
        }
        for line in net.stochastic_lines() {
            let l = &net.lines()[line];
            // Per-step sample 1 + σ ΔW/√dt, not a continuous-time signal.
            write!(out, ",vprod_discretized_{}_{}", l.from, l.to).unwrap();
        }
        out.push('\n');
        for ((t, u), v) in trace.times.iter().zip(&trace.states).zip(&trace.voltage) {
            write!(out, "{t:?}").unwrap();
            for x in u.iter().chain(v.iter()) {
                write!(out, ",{x:?}").unwrap();
            }
            out.push('\n');
        }
        emit(&out, Some(path))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    if let Err(e) = builder.build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(exit_code(&f))
        }
    }
}
