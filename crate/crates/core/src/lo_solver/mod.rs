//! Grid Lax-Oleinik value iteration on `T^1` and `T^2`.
//!
//! Values live on the uniform grid and are extended by periodic multilinear
//! interpolation. One step of the semigroup minimizes over straight
//! nearest-image segments; fixed points of the discounted operator give
//! `u_λ`, and mean-normalized fixed points at `λ = 0` give weak KAM
//! solutions.

mod analysis;
mod grid;
pub mod io;
mod kernel;
mod operator;
mod solve;

use serde::{Deserialize, Serialize};

pub use analysis::{
    backward_characteristic, hessian_green_inequality_check, hessian_green_inequality_check_scaled, hj_residual,
    GreenInequalityReport, HjResidual, PhasePath,
};
pub use grid::{GridFunction, GridHeader, MAX_POINTS};
pub use kernel::{discount_weight, gauss_legendre, one_step_action, ActionKernel, MAX_QUAD_ORDER};
pub use operator::{LoOperator, MIN_REACH_CELLS, TABLE_LIMIT};
pub use solve::{
    estimate_alpha, estimate_alpha_detailed, lo_step, resolve_alpha, semigroup_defect, solve_discounted,
    solve_discounted_from, solve_weak_kam, symmetric_lo_step, AlphaEstimate, FixedPoint, NON_CONTRACTION_STREAK,
};

use crate::error::{Error, Result};

/// How the additive constant `α(c)` of the operator is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr", into = "AlphaRepr")]
pub enum AlphaMode {
    Fixed(f64),
    /// Estimated from the long-run decrement of the un-normalized operator.
    #[default]
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<AlphaRepr> for AlphaMode {
    type Error = String;

    fn try_from(r: AlphaRepr) -> std::result::Result<Self, String> {
        match r {
            AlphaRepr::Value(v) if v.is_finite() => Ok(AlphaMode::Fixed(v)),
            AlphaRepr::Value(v) => Err(format!("alpha {v} is not finite")),
            AlphaRepr::Name(s) if s == "auto" => Ok(AlphaMode::Auto),
            AlphaRepr::Name(s) => Err(format!("alpha must be a number or \"auto\", got {s:?}")),
        }
    }
}

impl From<AlphaMode> for AlphaRepr {
    fn from(m: AlphaMode) -> Self {
        match m {
            AlphaMode::Fixed(v) => AlphaRepr::Value(v),
            AlphaMode::Auto => AlphaRepr::Name("auto".into()),
        }
    }
}

/// Solver parameters. JSON field names match the struct fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Points per axis.
    pub n: usize,
    /// Semigroup time step.
    pub tau: f64,
    /// Discount rate.
    pub lambda: f64,
    /// Cohomology vector; empty means zero.
    pub c: Vec<f64>,
    pub alpha: AlphaMode,
    /// Sup-norm change per step at which iteration stops.
    pub fix_tol: f64,
    pub max_iters: usize,
    /// Replaces the computed minimizer speed bound.
    pub vel_bound_override: Option<f64>,
    /// Gauss-Legendre order for one-step actions.
    pub quad_order: usize,
    /// Width of the bracket at which `α` estimation stops.
    pub alpha_tol: f64,
    /// Largest tolerated drift of normalized iterates, per unit time.
    pub alpha_drift_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 128,
            tau: 0.05,
            lambda: 0.0,
            c: Vec::new(),
            alpha: AlphaMode::Auto,
            fix_tol: 1e-7,
            max_iters: 200_000,
            vel_bound_override: None,
            quad_order: 4,
            alpha_tol: 1e-4,
            alpha_drift_tol: 5e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if self.n < 16 || self.n > MAX_POINTS {
            return Err(Error::config("n", format!("must be at least 16, got {}", self.n)));
        }
        if !positive(self.tau) {
            return Err(Error::config("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("lambda", format!("must be nonnegative, got {}", self.lambda)));
        }
        if self.c.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("c", "entries must be finite"));
        }
        if let AlphaMode::Fixed(a) = self.alpha {
            if !a.is_finite() {
                return Err(Error::config("alpha", "must be finite"));
            }
        }
        if !positive(self.fix_tol) {
            return Err(Error::config("fix_tol", format!("must be positive, got {}", self.fix_tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        if let Some(r) = self.vel_bound_override {
            if !positive(r) {
                return Err(Error::config("vel_bound_override", format!("must be positive, got {r}")));
            }
        }
        if !(1..=MAX_QUAD_ORDER).contains(&self.quad_order) {
            return Err(Error::config(
                "quad_order",
                format!("must lie in 1..={MAX_QUAD_ORDER}, got {}", self.quad_order),
            ));
        }
        if !positive(self.alpha_tol) {
            return Err(Error::config("alpha_tol", "must be positive"));
        }
        if !positive(self.alpha_drift_tol) {
            return Err(Error::config("alpha_drift_tol", "must be positive"));
        }
        Ok(())
    }

    /// The cohomology vector in dimension `d`.
    pub fn form(&self, d: usize) -> Result<Vec<f64>> {
        match self.c.len() {
            0 => Ok(vec![0.0; d]),
            len if len == d => Ok(self.c.clone()),
            len => Err(Error::config("c", format!("has {len} entries, model dimension is {d}"))),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}
