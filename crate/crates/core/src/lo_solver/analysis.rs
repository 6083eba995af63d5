//! A-posteriori checks on grid solutions.

use rayon::prelude::*;
use serde::Serialize;

use super::{GridFunction, LoOperator, SolverConfig};
use crate::dynamics::{sample_orbit, FlowParams, Hamiltonian, PhasePoint};
use crate::error::{Error, Result};
use crate::green::{height_of_pushed_vertical_with, GreenOptions};
use crate::semiconcave::{numeric_gradient, numeric_hessian, roundoff_floor, sym_min_eigenvalue, KINK_RATIO};

/// Spacing of the samples along a backward characteristic.
const PATH_SAMPLE_DT: f64 = 0.01;
const PATH_MAX_SAMPLES: usize = 10_000;

/// Default inequality tolerance, in units of the Hessian stability tolerance.
pub const GREEN_CHECK_FACTOR: f64 = 5.0;

/// Phase points sampled at `times[k]` (nonpositive, decreasing).
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePath {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
}

/// One-sided and central slopes of the interpolant at `q` along `axis`,
/// plus the kink test used for grid nodes.
fn slopes_at(u: &GridFunction, q: &[f64], axis: usize) -> (f64, f64, f64, bool) {
    let h = u.spacing();
    let at = |shift: f64| {
        let mut x = q.to_vec();
        x[axis] += shift;
        u.eval(&x)
    };
    let jump = |centre: f64| {
        let (l, m, r) = (at(centre - h), at(centre), at(centre + h));
        ((r - m) - (m - l)).abs() / h
    };
    let (l, m, r) = (at(-h), at(0.0), at(h));
    let forward = (r - m) / h;
    let backward = (m - l) / h;
    let neighbours = jump(2.0 * h).max(jump(-2.0 * h));
    let smooth = (forward - backward).abs() <= KINK_RATIO * neighbours + roundoff_floor(u, 1);
    (0.5 * (r - l) / h, forward, backward, smooth)
}

/// Integrates the flow backward for time `t` from `(q, c + du(q))`.
///
/// Fails with [`Error::NonDifferentiable`] when the one-sided slopes of `u`
/// at `q` disagree.
pub fn backward_characteristic<M: Hamiltonian + ?Sized>(
    model: &M,
    u: &GridFunction,
    q: &[f64],
    t: f64,
    lambda: f64,
    c: &[f64],
) -> Result<PhasePath> {
    let d = model.dim();
    if u.dim() != d || q.len() != d || c.len() != d {
        return Err(Error::input("grid, point, form and model dimensions differ"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::input(format!("duration t = {t} must be nonnegative")));
    }
    let mut p = vec![0.0; d];
    let mut forward = vec![0.0; d];
    let mut backward = vec![0.0; d];
    let mut smooth = true;
    for a in 0..d {
        let (central, f, b, ok) = slopes_at(u, q, a);
        p[a] = c[a] + central;
        forward[a] = f;
        backward[a] = b;
        smooth &= ok;
    }
    if !smooth {
        return Err(Error::NonDifferentiable {
            q: q.to_vec(),
            forward,
            backward,
        });
    }
    let start = PhasePoint::new(q.to_vec(), p);
    if t == 0.0 {
        return Ok(PhasePath {
            times: vec![0.0],
            points: vec![start],
        });
    }
    let steps = ((t / PATH_SAMPLE_DT).ceil() as usize).clamp(1, PATH_MAX_SAMPLES);
    let points = sample_orbit(model, &start, -t, steps, &FlowParams::with_lambda(lambda))?;
    let times = (0..=steps).map(|k| -t * k as f64 / steps as f64).collect();
    Ok(PhasePath { times, points })
}

/// Pointwise `λu + H(θ, c + du) - α` at reliable gradient nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HjResidual {
    /// Zero where the gradient is unreliable.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Sup of `|residual|` over reliable nodes.
    pub sup: f64,
}

pub fn hj_residual<M: Hamiltonian + ?Sized>(
    model: &M,
    u: &GridFunction,
    lambda: f64,
    c: &[f64],
    alpha: f64,
) -> Result<HjResidual> {
    let d = model.dim();
    if u.dim() != d || c.len() != d {
        return Err(Error::input("grid, form and model dimensions differ"));
    }
    let grad = numeric_gradient(u);
    let mask = grad.reliable_mask().to_vec();
    let values: Vec<f64> = (0..u.len())
        .map(|k| {
            if !mask[k] {
                return 0.0;
            }
            let p: Vec<f64> = grad.central(k).iter().zip(c).map(|(g, c)| g + c).collect();
            lambda * u.values()[k] + model.energy(&u.point(k), &p) - alpha
        })
        .collect();
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(HjResidual { values, mask, sup })
}

/// Outcome of comparing `D²u_t` with the Green heights.
#[derive(Debug, Clone, Serialize)]
pub struct GreenInequalityReport {
    /// Horizon actually used, a whole number of steps.
    pub t: f64,
    pub tol: f64,
    /// Hessian stability tolerance of `u_t`.
    pub grid_bound: f64,
    /// Alexandrov nodes with a reliable gradient that were checked.
    pub samples: usize,
    /// `(node, smallest eigenvalue of height - D²u_t)` below `-tol`.
    pub violations: Vec<(usize, f64)>,
    /// Samples whose backward orbit met a conjugate point.
    pub excluded: usize,
    pub pass_fraction: f64,
    pub worst_margin: f64,
}

/// Checks `D²T_t u0(q) ≤ H(G_t(q, c + dT_t u0(q))) + tol` at Alexandrov nodes.
///
/// `tol` defaults to [`GREEN_CHECK_FACTOR`] times the Hessian stability
/// tolerance of `u_t`. The constant `α` is irrelevant here and set to zero.
pub fn hessian_green_inequality_check<M: Hamiltonian + ?Sized>(
    model: &M,
    u0: &GridFunction,
    t: f64,
    config: &SolverConfig,
    tol: Option<f64>,
) -> Result<GreenInequalityReport> {
    hessian_green_inequality_check_scaled(model, u0, t, config, tol, 1.0)
}

/// As [`hessian_green_inequality_check`] with heights multiplied by
/// `height_scale`; scales below one serve as a negative control.
pub fn hessian_green_inequality_check_scaled<M: Hamiltonian + ?Sized>(
    model: &M,
    u0: &GridFunction,
    t: f64,
    config: &SolverConfig,
    tol: Option<f64>,
    height_scale: f64,
) -> Result<GreenInequalityReport> {
    config.validate()?;
    let d = model.dim();
    if u0.n() != config.n || u0.dim() != d {
        return Err(Error::input("initial grid does not match configuration"));
    }
    if !t.is_finite() || t < 3.0 * config.tau * (1.0 - 1e-9) {
        return Err(Error::config("t", format!("must be at least 3 tau = {}", 3.0 * config.tau)));
    }
    let c = config.form(d)?;
    let steps = (t / config.tau).round() as usize;
    let t_used = steps as f64 * config.tau;
    let op = LoOperator::new(model, config, 0.0)?;
    let ut = op.iterate(u0, steps)?;
    let grad = numeric_gradient(&ut);
    let hess = numeric_hessian(&ut);
    let grid_bound = hess.stability_tol();
    let tol = tol.unwrap_or(GREEN_CHECK_FACTOR * grid_bound);
    if !(tol >= 0.0) {
        return Err(Error::config("tol", "must be nonnegative"));
    }
    let opts = GreenOptions::default();
    let nodes: Vec<usize> = (0..ut.len()).filter(|&k| hess.is_alexandrov(k) && grad.is_reliable(k)).collect();
    let margins: Vec<Result<Option<f64>>> = nodes
        .par_iter()
        .map(|&k| {
            let p: Vec<f64> = grad.central(k).iter().zip(&c).map(|(g, c)| g + c).collect();
            let x = PhasePoint::new(ut.point(k), p);
            match height_of_pushed_vertical_with(model, &x, t_used, config.lambda, &opts) {
                Ok(h) => {
                    let diff = h.matrix * height_scale - hess.matrix(k);
                    let flat: Vec<f64> = diff.iter().copied().collect();
                    Ok(Some(sym_min_eigenvalue(&flat, d)))
                }
                Err(Error::ConjugatePoint { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut violations = Vec::new();
    let mut excluded = 0;
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    for (&k, m) in nodes.iter().zip(margins) {
        match m? {
            Some(m) => {
                checked += 1;
                worst = worst.min(m);
                if m < -tol {
                    violations.push((k, m));
                }
            }
            None => excluded += 1,
        }
    }
    let pass_fraction = if checked == 0 {
        0.0
    } else {
        (checked - violations.len()) as f64 / checked as f64
    };
    Ok(GreenInequalityReport {
        t: t_used,
        tol,
        grid_bound,
        samples: checked,
        violations,
        excluded,
        pass_fraction,
        worst_margin: worst,
    })
}
