//! One-step actions along straight segments.

use crate::dynamics::{nearest_image, velocity_bound, Hamiltonian};
use crate::error::{Error, Result};

/// Largest supported Gauss-Legendre order.
pub const MAX_QUAD_ORDER: usize = 16;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=MAX_QUAD_ORDER).contains(&order) {
        return Err(Error::config(
            "quad_order",
            format!("must lie in 1..={MAX_QUAD_ORDER}, got {order}"),
        ));
    }
    let n = order;
    if n == 1 {
        return Ok((vec![0.0], vec![2.0]));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n and P_{n-1}.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// `∫_{-τ}^0 e^{λs} ds`.
pub fn discount_weight(tau: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        tau
    } else {
        -(-lambda * tau).exp_m1() / lambda
    }
}

/// Quadrature and admissible-speed data for one semigroup step.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionKernel {
    pub tau: f64,
    pub quad_order: usize,
    /// Largest admissible speed `|displacement| / τ`.
    pub radius: f64,
    /// Gauss nodes mapped to `[-τ, 0]`.
    times: Vec<f64>,
    /// Matching weights (summing to `τ`).
    weights: Vec<f64>,
}

impl ActionKernel {
    pub fn new(tau: f64, quad_order: usize, radius: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::config("tau", format!("must be positive, got {tau}")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config("vel_bound_override", format!("speed cap must be positive, got {radius}")));
        }
        let (x, w) = gauss_legendre(quad_order)?;
        Ok(Self {
            tau,
            quad_order,
            radius,
            times: x.iter().map(|x| 0.5 * tau * (x - 1.0)).collect(),
            weights: w.iter().map(|w| 0.5 * tau * w).collect(),
        })
    }

    /// Kernel whose speed cap comes from the minimizer velocity bound over
    /// horizon `τ`, widened by `|c|` to cover the closed-form shift.
    pub fn for_model<M: Hamiltonian + ?Sized>(
        model: &M,
        tau: f64,
        lambda: f64,
        c: &[f64],
        quad_order: usize,
        override_radius: Option<f64>,
    ) -> Result<Self> {
        let radius = match override_radius {
            Some(r) => r,
            None => {
                if !(tau > 0.0) || !tau.is_finite() {
                    return Err(Error::config("tau", format!("must be positive, got {tau}")));
                }
                velocity_bound(model, tau, lambda)? + c.iter().map(|x| x * x).sum::<f64>().sqrt()
            }
        };
        Self::new(tau, quad_order, radius)
    }

    /// Largest admissible displacement.
    pub fn reach(&self) -> f64 {
        self.radius * self.tau
    }

    /// Sample times in `[-τ, 0]` and discounted weights `w_i e^{λ s_i}`.
    pub(crate) fn discounted_rule(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let w = self
            .times
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (lambda * s).exp())
            .collect();
        (self.times.clone(), w)
    }
}

/// `∫_{-τ}^0 e^{λs} L(γ, γ̇) ds` along `γ(s) = q1 + s·disp/τ`, without the
/// linear terms. `scratch` must have length `d`.
pub(crate) fn lagrangian_integral<M: Hamiltonian + ?Sized>(
    model: &M,
    q1: &[f64],
    disp: &[f64],
    tau: f64,
    times: &[f64],
    weights: &[f64],
    scratch: &mut [f64],
) -> f64 {
    let d = q1.len();
    let mut v = [0.0f64; 2];
    let v = &mut v[..d];
    for i in 0..d {
        v[i] = disp[i] / tau;
    }
    let mut acc = 0.0;
    for (s, w) in times.iter().zip(weights) {
        for i in 0..d {
            scratch[i] = q1[i] + s * v[i];
        }
        acc += w * model.lagrangian(scratch, v);
    }
    acc
}

/// Discounted action `∫_{-τ}^0 e^{λs}[L(γ, γ̇) - c·γ̇ + α] ds` of the straight
/// nearest-image segment from `q0` (time `-τ`) to `q1` (time `0`).
///
/// Returns `+∞` when the segment is faster than the kernel radius.
pub fn one_step_action<M: Hamiltonian + ?Sized>(
    model: &M,
    kernel: &ActionKernel,
    q0: &[f64],
    q1: &[f64],
    lambda: f64,
    c: &[f64],
    alpha: f64,
) -> Result<f64> {
    let d = model.dim();
    if q0.len() != d || q1.len() != d || c.len() != d || d > 2 {
        return Err(Error::input("point, form and model dimensions differ"));
    }
    let disp: Vec<f64> = q1.iter().zip(q0).map(|(a, b)| nearest_image(a - b)).collect();
    let len = disp.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len > kernel.reach() * (1.0 + 1e-12) {
        return Ok(f64::INFINITY);
    }
    let (times, weights) = kernel.discounted_rule(lambda);
    let mut scratch = vec![0.0; d];
    let l = lagrangian_integral(model, q1, &disp, kernel.tau, &times, &weights, &mut scratch);
    let w = discount_weight(kernel.tau, lambda);
    let cv: f64 = c.iter().zip(&disp).map(|(c, x)| c * x).sum::<f64>() / kernel.tau;
    Ok(l + w * (alpha - cv))
}
