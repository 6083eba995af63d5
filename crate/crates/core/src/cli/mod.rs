//! Command-line front end.
//!
//! Exit codes: 0 success, 1 property or assertion failure, 2 configuration
//! or input error, 3 numerical failure.

mod config;
mod experiment;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use config::{load_run_config, parse_alpha, parse_json, parse_run_config, RunConfig, WEAK_KAM_FIX_TOL};
pub use experiment::{
    run_experiment, ExperimentSpec, FieldSource, InitialData, ManifestRow, Metric, RunManifest, Sweep,
    SweepVariable, PRESETS,
};

use crate::dynamics::{parse_model_spec, Hamiltonian, ModelSpec, PhasePoint};
use crate::error::{Error, Result};
use crate::green::{
    check_height_sequence, detect_conjugate_points, green_minus, green_plus, height_of_pushed_vertical_with,
    monotonicity_check, GreenOptions, HeightFixture,
};
use crate::lo_solver::io::{read_grid, write_grid};
use crate::lo_solver::{hj_residual, solve_discounted_from, solve_weak_kam, GridFunction, GridHeader};
use crate::semiconcave::sym_min_eigenvalue;
use crate::pendulum_oracle::{c_of_e, oracle_d21_gap, oracle_sup_d2_gap, PendulumCurve, I_PLUS};

const METRIC_HELP: &str = "\
CSV columns (one per requested metric, after the sweep column):
  c0              sup |u - u_ref| modulo constants
  hausdorff       Hausdorff distance between refined gradient graphs on T^d x R^d
  fiberwise       max over graph nodes of |p - (c + du_ref)(theta)|
  d21             integral of |D2u - D2u_ref| (exact quadrature for pendulum oracle fields)
  measure_exceed  volume where D2u - D2u_ref >= eps
  sup_d2_gap      sup |D2u - D2u_ref| (exact for pendulum oracle fields)
  status          ok, or failed: <reason>
The sweep column is lambda, t or i.";

#[derive(Debug, Parser)]
#[command(name = "weakkam", version, about = "Weak KAM solvers, Green bundles and convergence sweeps on tori")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weak KAM solution (lambda = 0) modulo constants.
    Solve(SolveArgs),
    /// Discounted solution u_lambda (lambda > 0).
    Discounted(SolveArgs),
    /// Green bundle heights, monotonicity and conjugate-point reports.
    Green(GreenArgs),
    /// Parameter sweep from a preset or a JSON spec.
    #[command(after_help = METRIC_HELP)]
    Experiment(ExperimentArgs),
    /// Pendulum closed forms.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// JSON run configuration {"model": ..., "solver": {...}}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// pendulum | free[:d] | mechanical:(cos|sin):amp:k1[,k2];...
    #[arg(long)]
    pub model: Option<String>,
    /// Cohomology class, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub c: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// A number or "auto".
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// Sup-norm fixed-point tolerance (solve defaults to 2e-4 per step).
    #[arg(long)]
    pub fix_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub quad_order: Option<usize>,
    /// Speed cap replacing the a priori velocity bound.
    #[arg(long)]
    pub vel_bound: Option<f64>,
    /// Initial grid function (CSV or .bin).
    #[arg(long)]
    pub u0: Option<PathBuf>,
    /// Output grid file; a .bin extension selects the binary format.
    #[arg(long, default_value = "u.csv")]
    pub out: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GreenArgs {
    #[arg(long, default_value = "pendulum")]
    pub model: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Limit bundle G_+.
    #[arg(long)]
    pub plus: bool,
    /// Limit bundle G_-.
    #[arg(long)]
    pub minus: bool,
    /// Longest horizon of the --plus/--minus doubling schedule.
    #[arg(long, default_value_t = GreenOptions::default().t_max)]
    pub t_max: f64,
    /// Height of the vertical pushed for time t.
    #[arg(long)]
    pub t: Option<f64>,
    /// Check monotonicity of the pushed and pulled heights.
    #[arg(long)]
    pub monotonicity: bool,
    /// Lags for --monotonicity.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    pub times: Vec<f64>,
    /// Check a stored height fixture (JSON) instead of sampling.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Conjugate points of the pushed vertical on (0, T].
    #[arg(long)]
    pub conjugate: Option<f64>,
    /// Eigenvalue slack of the monotonicity checks.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Exit 1 when a checked property fails.
    #[arg(long)]
    pub assert: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, conflicts_with = "spec")]
    pub preset: Option<String>,
    /// JSON experiment spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit 1 unless the experiment's decreasing metrics decrease strictly.
    #[arg(long)]
    pub assert: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Cohomology I >= 4/pi.
    #[arg(long, conflicts_with = "e")]
    pub i: Option<f64>,
    /// Energy e >= 1.
    #[arg(long)]
    pub e: Option<f64>,
    /// Samples for --out.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    /// CSV of q, p, u, du, d2u.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve(args) => cmd_solve(&args, false),
        Command::Discounted(args) => cmd_solve(&args, true),
        Command::Green(args) => cmd_green(&args),
        Command::Experiment(args) => cmd_experiment(&args),
        Command::Oracle(args) => cmd_oracle(&args),
    }
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Solver(e.to_string()))? + "\n";
    if let Some(p) = path {
        std::fs::write(p, &text)?;
    }
    write_stdout(&text)
}

/// A reader that closed the pipe early is not an error.
fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Merges the config file and flags.
pub fn resolve_run_config(args: &SolveArgs, discounted: bool) -> Result<RunConfig> {
    let (mut cfg, explicit_tol) = match &args.config {
        Some(path) => load_run_config(path)?,
        None => (RunConfig::default(), false),
    };
    if let Some(m) = &args.model {
        cfg.model = ModelSpec::Named(m.clone());
    }
    let s = &mut cfg.solver;
    if let Some(c) = &args.c {
        s.c = c.clone();
    }
    if let Some(n) = args.n {
        s.n = n;
    }
    if let Some(t) = args.tau {
        s.tau = t;
    }
    if let Some(l) = args.lambda {
        s.lambda = l;
    }
    if let Some(a) = &args.alpha {
        s.alpha = parse_alpha(a)?;
    }
    if let Some(t) = args.fix_tol {
        s.fix_tol = t;
    } else if !explicit_tol && !discounted {
        s.fix_tol = WEAK_KAM_FIX_TOL;
    }
    if let Some(m) = args.max_iters {
        s.max_iters = m;
    }
    if let Some(q) = args.quad_order {
        s.quad_order = q;
    }
    if args.vel_bound.is_some() {
        s.vel_bound_override = args.vel_bound;
    }
    s.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct SolveReport {
    command: &'static str,
    model: String,
    config_hash: String,
    tool_version: &'static str,
    output: PathBuf,
    alpha: f64,
    lambda: f64,
    iterations: usize,
    last_change: f64,
    drift: f64,
    residual_sup: f64,
    reliable_fraction: f64,
}

fn cmd_solve(args: &SolveArgs, discounted: bool) -> Result<i32> {
    let cfg = resolve_run_config(args, discounted)?;
    let model = cfg.build_model()?;
    let d = model.dim();
    let solver = &cfg.solver;
    let c = solver.form(d)?;
    let u0 = match &args.u0 {
        Some(path) => read_grid(path)?.0,
        None => GridFunction::zeros(solver.n, d)?,
    };
    let fp = if discounted {
        solve_discounted_from(&model, solver, &u0)?
    } else {
        solve_weak_kam(&model, solver, &u0)?
    };
    let res = hj_residual(&model, &fp.u, solver.lambda, &c, fp.alpha)?;
    let header = GridHeader {
        c: c.clone(),
        lambda: solver.lambda,
        alpha: Some(fp.alpha),
        ..fp.u.header()
    };
    write_grid(&args.out, &fp.u, &header)?;
    let reliable = res.mask.iter().filter(|&&m| m).count() as f64 / res.mask.len() as f64;
    let report = SolveReport {
        command: if discounted { "discounted" } else { "solve" },
        model: model.kind().to_string(),
        config_hash: cfg.hash(),
        tool_version: env!("CARGO_PKG_VERSION"),
        output: args.out.clone(),
        alpha: fp.alpha,
        lambda: solver.lambda,
        iterations: fp.iterations,
        last_change: fp.last_change,
        drift: fp.drift,
        residual_sup: res.sup,
        reliable_fraction: reliable,
    };
    emit(&report, args.report.as_deref())?;
    Ok(0)
}

fn phase_point(args: &GreenArgs, d: usize) -> Result<PhasePoint> {
    let q = args.q.clone().unwrap_or_else(|| vec![0.0; d]);
    let p = args.p.clone().unwrap_or_else(|| vec![0.0; d]);
    if q.len() != d || p.len() != d {
        return Err(Error::config("q", format!("--q and --p need {d} entries each")));
    }
    if q.iter().chain(&p).any(|x| !x.is_finite()) {
        return Err(Error::config("q", "coordinates must be finite"));
    }
    Ok(PhasePoint::new(q, p))
}

fn cmd_green(args: &GreenArgs) -> Result<i32> {
    if !(args.tol >= 0.0) {
        return Err(Error::config("tol", "must be nonnegative"));
    }
    if !(args.lambda >= 0.0) || !args.lambda.is_finite() {
        return Err(Error::config("lambda", "must be nonnegative"));
    }
    let mut report = serde_json::Map::new();
    let mut failures = Vec::new();

    if let Some(path) = &args.fixture {
        let text = std::fs::read_to_string(path)?;
        let fixture: HeightFixture = parse_json(&text)?;
        let r = check_height_sequence(&fixture, args.tol)?;
        if !r.passed {
            failures.push(format!("fixture monotonicity: {}", r.violations.join("; ")));
        }
        report.insert("fixture".into(), json!(r));
        return finish_green(report, failures, args.assert);
    }

    let model = parse_model_spec(&args.model)?;
    let x = phase_point(args, model.dim())?;
    let opts = GreenOptions {
        t_max: args.t_max,
        ..GreenOptions::default()
    };
    opts.validate()?;
    let mut any = false;
    if args.plus || args.minus {
        any = true;
        let mut heights = Vec::new();
        for (flag, name) in [(args.plus, "plus"), (args.minus, "minus")] {
            if !flag {
                continue;
            }
            let g = if name == "plus" {
                green_plus(&model, &x, args.lambda, &opts)?
            } else {
                green_minus(&model, &x, args.lambda, &opts)?
            };
            if !g.converged {
                failures.push(format!("G_{name} did not converge (gap {:e})", g.cauchy_gap));
            }
            report.insert(
                name.into(),
                json!({
                    "height": g.height.rows(),
                    "t_used": g.t_used,
                    "converged": g.converged,
                    "cauchy_gap": g.cauchy_gap,
                }),
            );
            heights.push(g);
        }
        if let [plus, minus] = heights.as_slice() {
            if plus.converged && minus.converged {
                let diff = &plus.height.matrix - &minus.height.matrix;
                let flat: Vec<f64> = diff.transpose().iter().copied().collect();
                let margin = sym_min_eigenvalue(&flat, diff.nrows());
                if margin < -1e-6 {
                    failures.push(format!("H(G_-) exceeds H(G_+) by {:e}", -margin));
                }
                report.insert("plus_minus_margin".into(), json!(margin));
            }
        }
    }
    if let Some(t) = args.t {
        any = true;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::config("t", "must be positive"));
        }
        let h = height_of_pushed_vertical_with(&model, &x, t, args.lambda, &opts)?;
        report.insert("pushed".into(), json!({ "t": t, "height": h.rows() }));
    }
    if args.monotonicity {
        any = true;
        if args.times.is_empty() || args.times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config("times", "lags must be positive"));
        }
        let (fixture, r) = monotonicity_check(&model, &x, args.lambda, &args.times, args.tol)?;
        if !r.passed {
            failures.push(format!("monotonicity: {}", r.violations.join("; ")));
        }
        report.insert("monotonicity".into(), json!({ "report": r, "fixture": fixture }));
    }
    if let Some(t) = args.conjugate {
        any = true;
        let r = detect_conjugate_points(&model, &x, args.lambda, t)?;
        if !r.times.is_empty() {
            failures.push(format!("conjugate points at {:?}", r.times));
        }
        report.insert("conjugate".into(), json!(r));
    }
    if !any {
        return Err(Error::config(
            "mode",
            "choose at least one of --plus, --minus, --t, --monotonicity, --conjugate, --fixture",
        ));
    }
    finish_green(report, failures, args.assert)
}

fn finish_green(mut report: serde_json::Map<String, serde_json::Value>, failures: Vec<String>, assert: bool) -> Result<i32> {
    report.insert("failures".into(), json!(failures));
    emit(&report, None)?;
    if assert && !failures.is_empty() {
        return Err(Error::Property(failures.join("; ")));
    }
    Ok(0)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<i32> {
    let mut spec = match (&args.preset, &args.spec) {
        (Some(name), None) => ExperimentSpec::preset(name)?,
        (None, Some(path)) => ExperimentSpec::from_json(&std::fs::read_to_string(path)?)?,
        _ => return Err(Error::config("preset", "give exactly one of --preset and --spec")),
    };
    if let Some(dir) = &args.out_dir {
        spec.out_dir = dir.clone();
    }
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(t) = args.tau {
        spec.tau = t;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let manifest = run_experiment(&spec)?;
    let written = manifest.write(&spec.out_dir)?;
    write_stdout(&manifest.to_csv())?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    if manifest.failed_rows() > 0 {
        return Err(Error::Solver(format!("{} sweep point(s) failed", manifest.failed_rows())));
    }
    if args.assert && !manifest.trend_failures.is_empty() {
        return Err(Error::Property(format!(
            "not strictly decreasing: {}",
            manifest.trend_failures.join(", ")
        )));
    }
    Ok(0)
}

fn cmd_oracle(args: &OracleArgs) -> Result<i32> {
    let curve = match (args.i, args.e) {
        (Some(i), _) => Some(PendulumCurve::from_cohomology(i)?),
        (None, Some(e)) => Some(PendulumCurve::from_energy(e)?),
        (None, None) => None,
    };
    let Some(curve) = curve else {
        emit(
            &json!({ "i_plus": I_PLUS, "c_of_separatrix": c_of_e(1.0)? }),
            None,
        )?;
        return Ok(0);
    };
    let mut summary = json!({ "i": curve.i, "e": curve.e, "i_plus": I_PLUS });
    if curve.i > I_PLUS {
        summary["d21_to_separatrix"] = json!(oracle_d21_gap(curve.i)?);
        summary["sup_d2_gap_to_separatrix"] = json!(oracle_sup_d2_gap(curve.i)?.value);
    }
    if let Some(path) = &args.out {
        if args.n < 2 {
            return Err(Error::config("n", "need at least 2 samples"));
        }
        let u = curve.sample_u(args.n);
        let mut text = String::from("q,p,u,du,d2u\n");
        for (k, uk) in u.iter().enumerate() {
            let q = k as f64 / args.n as f64;
            let d2 = curve.d2u(q).map(|v| v.to_string()).unwrap_or_else(|_| "nan".into());
            text.push_str(&format!("{q},{},{uk},{},{d2}\n", curve.momentum(q), curve.du(q)));
        }
        std::fs::write(path, text)?;
        summary["out"] = json!(path);
    }
    emit(&summary, None)?;
    Ok(0)
}

#[cfg(test)]
mod tests;
