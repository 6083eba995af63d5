//! Parameter sweeps with CSV, plot-data and manifest output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{hash_json, parse_json, WEAK_KAM_FIX_TOL};
use crate::dynamics::{Hamiltonian, Mechanical, ModelSpec};
use crate::error::{Error, Result};
use crate::lo_solver::{
    estimate_alpha, solve_discounted, solve_weak_kam, AlphaMode, GridFunction, LoOperator, SolverConfig,
};
use crate::pendulum_oracle::{oracle_d21_gap, oracle_sup_d2_gap, PendulumCurve, I_PLUS};
use crate::semiconcave::{
    d21_fields, fiberwise_sup_distance, hausdorff_distance, leb_measure_exceed_fields, numeric_gradient,
    numeric_hessian, sym_spectral_norm, GraphCloud, Section, SymField,
};

/// Points per cell used when sampling graphs for the Hausdorff distance.
const CLOUD_REFINE_1D: usize = 8;

pub const PRESETS: [&str; 3] = ["discounted-pendulum", "cohom-pendulum", "lo-iteration"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    /// Discount rate of `u_λ`.
    Lambda,
    /// Horizon of `T_t u0`.
    T,
    /// Cohomology `I` of the pendulum field `u_I`.
    I,
}

impl SweepVariable {
    fn column(self) -> &'static str {
        match self {
            SweepVariable::Lambda => "lambda",
            SweepVariable::T => "t",
            SweepVariable::I => "i",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Recorded quantities; each has one fixed CSV column of the same name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Sup distance modulo constants to the reference field.
    #[serde(alias = "C0")]
    C0,
    /// Hausdorff distance between the closures of the gradient graphs.
    Hausdorff,
    /// Sup over the graph cloud of the fiber distance to the reference section.
    Fiberwise,
    /// `∫ |D²u − D²u_ref|`.
    D21,
    /// Volume where `D²u − D²u_ref ≥ eps`.
    MeasureExceed,
    /// `sup |D²u − D²u_ref|`.
    SupD2Gap,
}

impl Metric {
    pub fn column(self) -> &'static str {
        match self {
            Metric::C0 => "c0",
            Metric::Hausdorff => "hausdorff",
            Metric::Fiberwise => "fiberwise",
            Metric::D21 => "d21",
            Metric::MeasureExceed => "measure_exceed",
            Metric::SupD2Gap => "sup_d2_gap",
        }
    }
}

/// Where the compared fields come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldSource {
    /// Pendulum closed forms.
    Oracle,
    /// Grid solver.
    Solver,
}

/// Initial datum of the `t` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    #[default]
    Zero,
    /// `amplitude · cos(2π θ_1)`.
    Cosine { amplitude: f64 },
    /// Random trigonometric polynomial drawn from the experiment seed.
    Random { amplitude: f64, modes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: ModelSpec,
    pub sweep: Sweep,
    pub n: usize,
    pub tau: f64,
    #[serde(default)]
    pub c: Vec<f64>,
    pub metrics: Vec<Metric>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the oracle for the pendulum and the solver otherwise.
    #[serde(default)]
    pub fields: Option<FieldSource>,
    #[serde(default)]
    pub u0: InitialData,
    /// Threshold of the `measure_exceed` metric.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Fixed-point tolerance of every solve.
    #[serde(default = "default_fix_tol")]
    pub fix_tol: f64,
    /// Per-step tolerance of weak KAM solves, whose normalized change decays
    /// slowly on rotational classes.
    #[serde(default = "default_kam_tol")]
    pub kam_tol: f64,
    /// Iteration cap of every solve.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Metrics expected to decrease strictly along the sweep.
    #[serde(default)]
    pub decreasing: Vec<Metric>,
    /// Desk-scale wall-clock budget for the whole sweep.
    #[serde(default)]
    pub budget_secs: Option<f64>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_eps() -> f64 {
    0.05
}

fn default_fix_tol() -> f64 {
    1e-9
}

fn default_kam_tol() -> f64 {
    WEAK_KAM_FIX_TOL
}

fn default_max_iters() -> usize {
    SolverConfig::default().max_iters
}

impl ExperimentSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let base = |name: &str, model: &str, variable, values: Vec<f64>, n, tau, c: Vec<f64>| ExperimentSpec {
            name: name.into(),
            model: ModelSpec::Named(model.into()),
            sweep: Sweep { variable, values },
            n,
            tau,
            c,
            metrics: Vec::new(),
            out_dir: default_out_dir(),
            seed: 0,
            fields: None,
            u0: InitialData::Zero,
            eps: default_eps(),
            fix_tol: default_fix_tol(),
            kam_tol: default_kam_tol(),
            max_iters: default_max_iters(),
            decreasing: Vec::new(),
            budget_secs: None,
        };
        match name {
            "discounted-pendulum" => Ok(ExperimentSpec {
                metrics: vec![Metric::C0, Metric::Hausdorff, Metric::Fiberwise],
                decreasing: vec![Metric::C0, Metric::Hausdorff],
                fields: Some(FieldSource::Oracle),
                budget_secs: Some(300.0),
                ..base(name, "pendulum", SweepVariable::Lambda, vec![0.2, 0.1, 0.05, 0.025], 200, 0.02, vec![1.5])
            }),
            "cohom-pendulum" => Ok(ExperimentSpec {
                metrics: vec![Metric::D21, Metric::SupD2Gap, Metric::MeasureExceed, Metric::C0],
                decreasing: vec![Metric::D21, Metric::MeasureExceed],
                fields: Some(FieldSource::Oracle),
                budget_secs: Some(30.0),
                ..base(
                    name,
                    "pendulum",
                    SweepVariable::I,
                    [0.1, 0.03, 0.01, 0.003].iter().map(|d| I_PLUS + d).collect(),
                    1000,
                    0.02,
                    Vec::new(),
                )
            }),
            "lo-iteration" => Ok(ExperimentSpec {
                metrics: vec![Metric::C0, Metric::Hausdorff],
                decreasing: vec![Metric::C0],
                fields: Some(FieldSource::Solver),
                u0: InitialData::Cosine { amplitude: 0.3 },
                budget_secs: Some(60.0),
                ..base(name, "free", SweepVariable::T, vec![0.5, 1.0, 2.0, 4.0, 8.0], 128, 0.05, vec![0.5])
            }),
            other => Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
            )),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = parse_json(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_".contains(ch)) {
            return Err(Error::config("name", "must be non-empty and use only [A-Za-z0-9_-]"));
        }
        let v = &self.sweep.values;
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("sweep.values", "must be a non-empty list of finite numbers"));
        }
        let increasing = v.windows(2).all(|w| w[1] > w[0]);
        let decreasing = v.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::config("sweep.values", "must be strictly monotone"));
        }
        if self.metrics.is_empty() {
            return Err(Error::config("metrics", "at least one metric is required"));
        }
        if let Some(m) = self.decreasing.iter().find(|m| !self.metrics.contains(m)) {
            return Err(Error::config("decreasing", format!("{} is not a recorded metric", m.column())));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "must be positive"));
        }
        if !(self.kam_tol > 0.0 && self.kam_tol.is_finite()) {
            return Err(Error::config("kam_tol", "must be positive"));
        }
        if let Some(b) = self.budget_secs {
            if !(b > 0.0) {
                return Err(Error::config("budget_secs", "must be positive"));
            }
        }
        let model = self.model.build()?;
        self.solver_config(&model)?.validate()?;
        match self.sweep.variable {
            SweepVariable::Lambda if v.iter().any(|&l| !(l > 0.0)) => {
                Err(Error::config("sweep.values", "discount rates must be positive"))
            }
            SweepVariable::T if v.iter().any(|&t| !(t >= 0.0)) => {
                Err(Error::config("sweep.values", "horizons must be nonnegative"))
            }
            SweepVariable::I if model.kind() != "pendulum" => {
                Err(Error::config("sweep.variable", "cohomology sweeps run in the pendulum chart"))
            }
            SweepVariable::I if v.iter().any(|&i| !(i > I_PLUS)) => {
                Err(Error::config("sweep.values", format!("cohomologies must exceed I+ = {I_PLUS}")))
            }
            _ => Ok(()),
        }?;
        if self.source(&model) == FieldSource::Oracle {
            if model.kind() != "pendulum" {
                return Err(Error::config("fields", "oracle fields exist only for the pendulum"));
            }
            if self.sweep.variable != SweepVariable::I && !(self.c.first().is_some_and(|&c| c.abs() >= I_PLUS)) {
                return Err(Error::config("c", format!("oracle reference needs |c| >= I+ = {I_PLUS}")));
            }
        }
        Ok(())
    }

    fn source(&self, model: &Mechanical) -> FieldSource {
        self.fields.unwrap_or(if model.kind() == "pendulum" {
            FieldSource::Oracle
        } else {
            FieldSource::Solver
        })
    }

    fn solver_config(&self, model: &Mechanical) -> Result<SolverConfig> {
        let d = model.dim();
        let c = if self.c.is_empty() { vec![0.0; d] } else { self.c.clone() };
        if c.len() != d {
            return Err(Error::config("c", format!("expected {d} entries, got {}", c.len())));
        }
        Ok(SolverConfig {
            n: self.n,
            tau: self.tau,
            c,
            fix_tol: self.fix_tol,
            max_iters: self.max_iters,
            ..SolverConfig::default()
        })
    }

    fn initial(&self, d: usize) -> Result<GridFunction> {
        match &self.u0 {
            InitialData::Zero => GridFunction::zeros(self.n, d),
            InitialData::Cosine { amplitude } => {
                GridFunction::from_fn(self.n, d, |q| amplitude * (2.0 * PI * q[0]).cos())
            }
            InitialData::Random { amplitude, modes } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let terms: Vec<(Vec<f64>, f64, f64)> = (0..*modes)
                    .map(|_| {
                        let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
                        (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0))
                    })
                    .collect();
                GridFunction::from_fn(self.n, d, |q| {
                    amplitude
                        * terms
                            .iter()
                            .map(|(k, a, ph)| {
                                let arg: f64 = k.iter().zip(q).map(|(k, x)| k * x).sum();
                                a * (2.0 * PI * (arg + ph)).cos()
                            })
                            .sum::<f64>()
                })
            }
        }
    }
}

/// A field together with its gradient graph data.
struct Field {
    u: GridFunction,
    hessian: SymField,
    /// `c + du` at the nodes.
    section: Section,
    /// Dense sample of the graph closure.
    cloud: GraphCloud,
    /// Exact second derivative available for the cohomology sweep.
    cohomology: Option<f64>,
}

fn refine_for(d: usize) -> usize {
    if d == 1 {
        CLOUD_REFINE_1D
    } else {
        1
    }
}

impl Field {
    fn from_grid(u: GridFunction, c: &[f64], tag: &str) -> Result<Self> {
        let grad = numeric_gradient(&u);
        let section = Section::from_gradient(&grad, c);
        let cloud = section.refined_graph(refine_for(u.dim()), tag)?;
        Ok(Self {
            hessian: numeric_hessian(&u),
            section,
            cloud,
            u,
            cohomology: None,
        })
    }

    /// Pendulum closed form; graphs use the exact momentum.
    fn oracle(i: f64, n: usize, tag: &str) -> Result<Self> {
        let curve = if i > I_PLUS {
            PendulumCurve::from_cohomology(i)?
        } else {
            PendulumCurve::separatrix()
        };
        let sign = if i < 0.0 { -1.0 } else { 1.0 };
        let u = GridFunction::new(n, 1, curve.sample_u(n).into_iter().map(|x| sign * x).collect())?;
        let momentum = |q: f64| sign * curve.momentum(q.rem_euclid(1.0));
        let section = Section::from_fn(n, 1, |q| vec![momentum(q[0])])?;
        let cloud = Section::from_fn(n * CLOUD_REFINE_1D, 1, |q| vec![momentum(q[0])])?.graph(tag)?;
        Ok(Self {
            hessian: numeric_hessian(&u),
            section,
            cloud,
            u,
            cohomology: Some(i.abs()),
        })
    }
}

fn sup_d2_gap(a: &SymField, b: &SymField) -> f64 {
    let d = a.dim();
    (0..a.len())
        .filter(|&k| a.is_alexandrov(k) && b.is_alexandrov(k))
        .map(|k| {
            let diff: Vec<f64> = a.entries(k).iter().zip(b.entries(k)).map(|(x, y)| x - y).collect();
            sym_spectral_norm(&diff, d)
        })
        .fold(0.0, f64::max)
}

fn measure(field: &Field, reference: &Field, metric: Metric, eps: f64) -> Result<f64> {
    let exact = match (field.cohomology, reference.cohomology) {
        (Some(i), Some(r)) if (r - I_PLUS).abs() < 1e-15 && i > I_PLUS => Some(i),
        _ => None,
    };
    Ok(match metric {
        Metric::C0 => field.u.sup_distance_mod_constants(&reference.u)?,
        Metric::Hausdorff => hausdorff_distance(&field.cloud, &reference.cloud)?,
        Metric::Fiberwise => {
            let nodes = field.section.graph("field")?;
            fiberwise_sup_distance(&nodes, &reference.section)?
        }
        Metric::D21 => match exact {
            Some(i) => oracle_d21_gap(i)?,
            None => d21_fields(&field.hessian, &reference.hessian)?.value,
        },
        Metric::MeasureExceed => leb_measure_exceed_fields(&field.hessian, &reference.hessian, eps)?.measure,
        Metric::SupD2Gap => match exact {
            Some(i) => oracle_sup_d2_gap(i)?.value,
            None => sup_d2_gap(&field.hessian, &reference.hessian),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sweep_value: f64,
    pub metrics: BTreeMap<String, f64>,
    /// `"ok"` or `"failed: <reason>"`.
    pub status: String,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub tool_version: String,
    pub spec: ExperimentSpec,
    pub rows: Vec<ManifestRow>,
    /// Metrics listed in `decreasing` that did not decrease strictly.
    pub trend_failures: Vec<String>,
    pub budget_secs: Option<f64>,
    pub setup_secs: f64,
    pub total_secs: f64,
}

impl RunManifest {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }

    pub fn within_budget(&self) -> bool {
        self.budget_secs.is_none_or(|b| self.total_secs <= b)
    }

    pub fn column(&self, metric: Metric) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.metrics.get(metric.column()).copied().unwrap_or(f64::NAN))
            .collect()
    }

    /// Deterministic CSV: sweep value, one column per metric, status.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut head = vec![self.spec.sweep.variable.column().to_string()];
        head.extend(self.spec.metrics.iter().map(|m| m.column().to_string()));
        head.push("status".into());
        out.push_str(&head.join(","));
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{}", row.sweep_value);
            for m in &self.spec.metrics {
                match row.metrics.get(m.column()) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push_str(",nan"),
                }
            }
            let _ = writeln!(out, ",{}", row.status.replace([',', '\n'], ";"));
        }
        out
    }

    /// Two-column plot data for one metric; failed rows are skipped.
    pub fn plot_data(&self, metric: Metric) -> String {
        let mut out = format!("# {} {}\n", self.spec.sweep.variable.column(), metric.column());
        for row in &self.rows {
            if let Some(v) = row.metrics.get(metric.column()) {
                let _ = writeln!(out, "{} {v}", row.sweep_value);
            }
        }
        out
    }

    /// Writes `<name>.csv`, `<name>_<metric>.dat` and `<name>_manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let csv = dir.join(format!("{}.csv", self.name));
        std::fs::write(&csv, self.to_csv())?;
        written.push(csv);
        for m in &self.spec.metrics {
            let path = dir.join(format!("{}_{}.dat", self.name, m.column()));
            std::fs::write(&path, self.plot_data(*m))?;
            written.push(path);
        }
        let path = dir.join(format!("{}_manifest.json", self.name));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Solver(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        written.push(path);
        Ok(written)
    }
}

/// Runs every sweep point; failures are recorded per row.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunManifest> {
    spec.validate()?;
    let start = Instant::now();
    let model = spec.model.build()?;
    let d = model.dim();
    let base = spec.solver_config(&model)?;
    let source = spec.source(&model);
    let variable = spec.sweep.variable;

    // α only shifts u_λ and u_t by constants; it is needed for λ sweeps to
    // keep iterates bounded and for solver references.
    let needs_alpha = variable == SweepVariable::Lambda || source == FieldSource::Solver;
    let alpha = if needs_alpha { estimate_alpha(&model, &base)? } else { 0.0 };
    let kam = SolverConfig {
        fix_tol: spec.kam_tol,
        ..base.clone()
    };
    let reference = match (source, variable) {
        (FieldSource::Oracle, SweepVariable::I) => Field::oracle(I_PLUS, spec.n, "reference")?,
        (FieldSource::Oracle, _) => Field::oracle(base.c[0], spec.n, "reference")?,
        (FieldSource::Solver, SweepVariable::I) => solver_reference(&model, &kam, &[I_PLUS])?,
        (FieldSource::Solver, _) => solver_reference(&model, &kam, &base.c.clone())?,
    };
    let u0 = spec.initial(d)?;
    let setup_secs = start.elapsed().as_secs_f64();

    let compute = |value: f64| -> Result<Field> {
        match (variable, source) {
            (SweepVariable::Lambda, _) => {
                let cfg = SolverConfig {
                    lambda: value,
                    alpha: AlphaMode::Fixed(alpha),
                    ..base.clone()
                };
                Field::from_grid(solve_discounted(&model, &cfg)?.u, &base.c, "u_lambda")
            }
            (SweepVariable::T, _) => {
                let op = LoOperator::new(&model, &base, alpha)?;
                let steps = (value / spec.tau).round() as usize;
                Field::from_grid(op.iterate(&u0, steps)?, &base.c, "u_t")
            }
            (SweepVariable::I, FieldSource::Oracle) => Field::oracle(value, spec.n, "u_i"),
            (SweepVariable::I, FieldSource::Solver) => solver_reference(&model, &kam, &[value]),
        }
    };
    let rows: Vec<ManifestRow> = spec
        .sweep
        .values
        .par_iter()
        .map(|&value| {
            let t0 = Instant::now();
            let outcome = compute(value).and_then(|field| {
                spec.metrics
                    .iter()
                    .map(|&m| Ok((m.column().to_string(), measure(&field, &reference, m, spec.eps)?)))
                    .collect::<Result<BTreeMap<_, _>>>()
            });
            let (metrics, status) = match outcome {
                Ok(m) => (m, "ok".to_string()),
                Err(e) => (BTreeMap::new(), format!("failed: {e}")),
            };
            ManifestRow {
                sweep_value: value,
                metrics,
                status,
                wall_clock_secs: t0.elapsed().as_secs_f64(),
            }
        })
        .collect();

    let mut manifest = RunManifest {
        name: spec.name.clone(),
        config_hash: spec.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        rows,
        trend_failures: Vec::new(),
        budget_secs: spec.budget_secs,
        setup_secs,
        total_secs: 0.0,
    };
    manifest.trend_failures = spec
        .decreasing
        .iter()
        .filter(|&&m| {
            let col = manifest.column(m);
            !col.windows(2).all(|w| w[1] < w[0])
        })
        .map(|m| m.column().to_string())
        .collect();
    manifest.total_secs = start.elapsed().as_secs_f64();
    Ok(manifest)
}

fn solver_reference(model: &Mechanical, base: &SolverConfig, c: &[f64]) -> Result<Field> {
    let cfg = SolverConfig {
        c: c.to_vec(),
        alpha: AlphaMode::Auto,
        ..base.clone()
    };
    let zero = GridFunction::zeros(cfg.n, model.dim())?;
    let fp = solve_weak_kam(model, &cfg, &zero)?;
    Field::from_grid(fp.u, c, "reference")
}
