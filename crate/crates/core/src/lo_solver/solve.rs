//! Fixed points of the grid operator and the critical value.

use super::{AlphaMode, GridFunction, LoOperator, SolverConfig};
use crate::dynamics::{Hamiltonian, Reversed};
use crate::error::{Error, Result};

/// Consecutive increases of the sup change that count as non-contraction.
pub const NON_CONTRACTION_STREAK: usize = 10;

/// Result of [`estimate_alpha_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaEstimate {
    /// Mean per-step decrement divided by `τ`, clamped into the bracket.
    pub value: f64,
    /// `α` lies in `[lo, hi]` for the grid operator.
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    /// Final mean-zero iterate; a warm start for the weak KAM iteration.
    pub u: GridFunction,
}

/// A converged iterate.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub u: GridFunction,
    pub alpha: f64,
    pub iterations: usize,
    /// Sup-norm change of the final step.
    pub last_change: f64,
    /// Mean change per unit time of the final step (zero for `λ > 0`).
    pub drift: f64,
}

/// Consecutive agreeing checks needed before the averaged estimate is accepted.
const AGREEMENT_CHECKS: usize = 3;

/// Critical value of the grid operator for the form `config.c`.
///
/// Iterates the undiscounted operator without `α` from `u = 0`, subtracting
/// the mean after each step. Writing `δ_N = u_N - u_{N-1}`, monotonicity
/// gives `-max δ_N / τ ≤ α ≤ -min δ_N / τ` with both bounds monotone in `N`.
/// On rotational classes this bracket only narrows like `1/t`, so the
/// returned value is the mean decrement averaged over the second half of the
/// run, `-(U_N - U_{N/2}) / (τ N/2)` with `U` the accumulated mean shift,
/// which converges like `1/t²`. Iteration stops when the bracket is narrower
/// than `config.alpha_tol`, or when the average over `[N/2, N]` agrees with
/// the one over `[N/4, N/2]` within `alpha_tol` at consecutive checks.
/// `config.lambda` is ignored: the critical value does not depend on it.
pub fn estimate_alpha_detailed<M: Hamiltonian + ?Sized>(model: &M, config: &SolverConfig) -> Result<AlphaEstimate> {
    let cfg = config.with_lambda(0.0);
    let op = LoOperator::new(model, &cfg, 0.0)?;
    let tau = cfg.tau;
    let min_steps = ((2.0 / tau).ceil() as usize).max(16);
    let mut u = GridFunction::zeros(cfg.n, model.dim())?;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut shifts = vec![0.0];
    let mut agreeing = 0;
    let finish = |value: f64, lo: f64, hi: f64, it: usize, u: GridFunction| AlphaEstimate {
        value: value.clamp(lo.min(hi), hi.max(lo)),
        lo,
        hi,
        iterations: it,
        u,
    };
    for it in 1..=cfg.max_iters {
        let next = op.step(&u)?;
        let diff = next.sub(&u)?;
        lo = lo.max(-diff.max() / tau);
        hi = hi.min(-diff.min() / tau);
        let shift = next.mean();
        shifts.push(shifts[it - 1] + shift);
        let next = next.normalized();
        if hi - lo <= cfg.alpha_tol {
            return Ok(finish(-diff.mean() / tau, lo, hi, it, next));
        }
        if it >= min_steps && it % 4 == 0 {
            let window = |a: usize, b: usize| -(shifts[b] - shifts[a]) / ((b - a) as f64 * tau);
            let late = window(it / 2, it);
            let early = window(it / 4, it / 2);
            if (late - early).abs() <= cfg.alpha_tol {
                agreeing += 1;
                if agreeing >= AGREEMENT_CHECKS {
                    return Ok(finish(late, lo, hi, it, next));
                }
            } else {
                agreeing = 0;
            }
        }
        u = next;
    }
    Err(Error::Estimation {
        iters: cfg.max_iters,
        lo,
        hi,
    })
}

pub fn estimate_alpha<M: Hamiltonian + ?Sized>(model: &M, config: &SolverConfig) -> Result<f64> {
    Ok(estimate_alpha_detailed(model, config)?.value)
}

/// The `α` the operator uses: the fixed value or an estimate.
pub fn resolve_alpha<M: Hamiltonian + ?Sized>(model: &M, config: &SolverConfig) -> Result<f64> {
    config.validate()?;
    match config.alpha {
        AlphaMode::Fixed(a) => Ok(a),
        AlphaMode::Auto => estimate_alpha(model, config),
    }
}

/// One step `T_τ^{c,λ} u`.
pub fn lo_step<M: Hamiltonian + ?Sized>(model: &M, u: &GridFunction, config: &SolverConfig) -> Result<GridFunction> {
    let alpha = resolve_alpha(model, config)?;
    LoOperator::new(model, config, alpha)?.step(u)
}

/// `-T_τ^{L̃}(-u)` with `L̃(q, v) = L(q, -v)`.
///
/// The reversal applies to the whole modified Lagrangian `L - c·v + α`, so
/// the reversed operator runs with form `-c` and the same `α`.
pub fn symmetric_lo_step<M: Hamiltonian + ?Sized>(
    model: &M,
    u: &GridFunction,
    config: &SolverConfig,
) -> Result<GridFunction> {
    let alpha = resolve_alpha(model, config)?;
    let reversed = Reversed(model);
    let mut cfg = config.clone();
    cfg.c = config.form(model.dim())?.iter().map(|x| -x).collect();
    let op = LoOperator::new(&reversed, &cfg, alpha)?;
    Ok(op.step(&u.map(|x| -x))?.map(|x| -x))
}

/// `‖T_τ T_τ u - T_{2τ} u‖_∞`.
pub fn semigroup_defect<M: Hamiltonian + ?Sized>(model: &M, u: &GridFunction, config: &SolverConfig) -> Result<f64> {
    let alpha = resolve_alpha(model, config)?;
    let one = LoOperator::new(model, config, alpha)?;
    let double = SolverConfig {
        tau: 2.0 * config.tau,
        ..config.clone()
    };
    let two = LoOperator::new(model, &double, alpha)?;
    one.iterate(u, 2)?.sup_distance(&two.step(u)?)
}

/// Discounted solution `u_λ` from `u = 0`.
pub fn solve_discounted<M: Hamiltonian + ?Sized>(model: &M, config: &SolverConfig) -> Result<FixedPoint> {
    let u0 = GridFunction::zeros(config.n, model.dim())?;
    solve_discounted_from(model, config, &u0)
}

/// Discounted solution started from `u0`; the fixed point does not depend
/// on the start, only the iteration count does.
pub fn solve_discounted_from<M: Hamiltonian + ?Sized>(
    model: &M,
    config: &SolverConfig,
    u0: &GridFunction,
) -> Result<FixedPoint> {
    if !(config.lambda > 0.0) {
        return Err(Error::config("lambda", "discounted solve needs lambda > 0"));
    }
    let alpha = resolve_alpha(model, config)?;
    let op = LoOperator::new(model, config, alpha)?;
    let mut u = u0.clone();
    let mut prev = f64::INFINITY;
    let mut streak = 0;
    for it in 1..=config.max_iters {
        let next = op.step(&u)?;
        let change = next.sup_distance(&u)?;
        if change <= config.fix_tol {
            return Ok(FixedPoint {
                u: next,
                alpha,
                iterations: it,
                last_change: change,
                drift: 0.0,
            });
        }
        if change > prev {
            streak += 1;
            if streak >= NON_CONTRACTION_STREAK {
                return Err(Error::Solver(format!(
                    "sup change grew for {streak} consecutive steps (now {change:.3e}) at iteration {it}"
                )));
            }
        } else {
            streak = 0;
        }
        prev = change;
        u = next;
    }
    Err(Error::Solver(format!(
        "no fixed point within {} iterations (last change {prev:.3e})",
        config.max_iters
    )))
}

/// Weak KAM solution: fixed point of `T_τ^c` modulo constants, normalized
/// to mean zero.
///
/// With a wrong `α` the un-normalized iterates move by `(α - α_grid) τ` per
/// step; that rate is reported as an alpha mismatch once the normalized
/// iteration has converged.
pub fn solve_weak_kam<M: Hamiltonian + ?Sized>(
    model: &M,
    config: &SolverConfig,
    u0: &GridFunction,
) -> Result<FixedPoint> {
    if config.lambda != 0.0 {
        return Err(Error::config("lambda", "weak KAM solve needs lambda = 0"));
    }
    if u0.n() != config.n || u0.dim() != model.dim() {
        return Err(Error::input("initial grid does not match configuration"));
    }
    let (alpha, mut u) = match config.alpha {
        AlphaMode::Fixed(a) => {
            config.validate()?;
            (a, u0.normalized())
        }
        // The normalized iteration does not see α, so the estimator's last
        // iterate continues the same sequence from zero.
        AlphaMode::Auto if u0.sup_norm() == 0.0 => {
            let est = estimate_alpha_detailed(model, config)?;
            (est.value, est.u)
        }
        AlphaMode::Auto => (estimate_alpha(model, config)?, u0.normalized()),
    };
    let op = LoOperator::new(model, config, alpha)?;
    let mut drift = 0.0;
    let mut change = f64::INFINITY;
    for it in 1..=config.max_iters {
        let next = op.step(&u)?;
        drift = next.mean() / config.tau;
        let next = next.normalized();
        change = next.sup_distance(&u)?;
        u = next;
        if change <= config.fix_tol {
            if drift.abs() > config.alpha_drift_tol {
                return Err(Error::AlphaMismatch { drift });
            }
            return Ok(FixedPoint {
                u,
                alpha,
                iterations: it,
                last_change: change,
                drift,
            });
        }
    }
    if drift.abs() > config.alpha_drift_tol {
        return Err(Error::AlphaMismatch { drift });
    }
    Err(Error::Solver(format!(
        "no fixed point within {} iterations (last change {change:.3e})",
        config.max_iters
    )))
}
