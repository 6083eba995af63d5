//! Conformal Hamiltonian dynamics on `T^d x R^d`.
//!
//! The λ-discounted flow is
//!
//! ```text
//! dq/dt = ∂H/∂p(q, p),    dp/dt = -∂H/∂q(q, p) - λ p
//! ```
//!
//! and its linearization acts on Lagrangian frames `(X, Y)`:
//!
//! ```text
//! X' = H_pq X + H_pp Y,    Y' = -H_qq X - H_qp Y - λ Y
//! ```
//!
//! Positions live in `[0, 1)^d`; displacements use the nearest image.

mod integrator;
mod model;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub(crate) use integrator::{Control, Dopri5};
pub use model::{
    parse_model_spec, FourierPotential, FourierTerm, Hamiltonian, HessianBlocks, Mechanical,
    ModelSpec, Reversed, WaveKind,
};

use crate::error::{Error, Result};

/// Reduces a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Nearest-image representative of a displacement, in `[-½, ½]`.
#[inline]
pub fn nearest_image(dx: f64) -> f64 {
    dx - dx.round()
}

/// Nearest-image Euclidean distance on `T^d`.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| nearest_image(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// A point of `T*T^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        let q = q.into_iter().map(wrap).collect();
        Self { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Torus distance on `q` combined with the Euclidean distance on `p`.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        let dq = torus_distance(&self.q, &other.q);
        let dp: f64 = self
            .p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (dq * dq + dp).sqrt()
    }
}

/// A `d`-dimensional plane in `T_x(T*T^d)`, spanned by the columns of `[X; Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl TangentFrame {
    /// The vertical `V = ker Dπ`: `X = 0`, `Y = 1`.
    pub fn vertical(d: usize) -> Self {
        Self {
            x: DMatrix::zeros(d, d),
            y: DMatrix::identity(d, d),
        }
    }

    /// Graph of the symmetric matrix `s`: `X = 1`, `Y = s`.
    pub fn graph(s: &DMatrix<f64>) -> Self {
        let d = s.nrows();
        Self {
            x: DMatrix::identity(d, d),
            y: s.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    /// `XᵀY - YᵀX`; vanishes for Lagrangian planes.
    pub fn lagrangian_defect(&self) -> DMatrix<f64> {
        self.x.transpose() * &self.y - self.y.transpose() * &self.x
    }

    /// Gram determinant of the stacked columns divided by the squared column
    /// norms; 1 for orthogonal columns, 0 for a rank drop.
    pub fn conditioning(&self) -> f64 {
        let d = self.dim();
        let mut stacked = DMatrix::zeros(2 * d, d);
        stacked.view_mut((0, 0), (d, d)).copy_from(&self.x);
        stacked.view_mut((d, 0), (d, d)).copy_from(&self.y);
        let gram = stacked.transpose() * &stacked;
        let norms: f64 = (0..d).map(|i| gram[(i, i)]).product();
        if norms == 0.0 {
            return 0.0;
        }
        gram.determinant() / norms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Discount rate λ ≥ 0.
    pub lambda: f64,
    pub dt_max: f64,
    /// Local error tolerance per unit time.
    pub tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            dt_max: 0.05,
            tol: 1e-10,
        }
    }
}

impl FlowParams {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::config("dt_max", "must be > 0"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be > 0"));
        }
        Ok(())
    }

    pub(crate) fn solver(&self) -> Dopri5 {
        Dopri5 {
            tol: self.tol,
            dt_max: self.dt_max,
        }
    }
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { what: what.into() })
    }
}

/// Legendre map `(q, p) ↦ (q, ∂H/∂p(q, p))`.
pub fn legendre<M: Hamiltonian + ?Sized>(model: &M, x: &PhasePoint) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = model.dim();
    let mut h_q = vec![0.0; d];
    let mut v = vec![0.0; d];
    model.gradient(&x.q, &x.p, &mut h_q, &mut v);
    check_finite(&v, "legendre")?;
    Ok((x.q.clone(), v))
}

/// Inverse Legendre map `(q, v) ↦ (q, ∂L/∂v(q, v))`.
pub fn legendre_inverse<M: Hamiltonian + ?Sized>(model: &M, q: &[f64], v: &[f64]) -> Result<PhasePoint> {
    let mut p = vec![0.0; model.dim()];
    model.lagrangian_dv(q, v, &mut p);
    check_finite(&p, "legendre_inverse")?;
    Ok(PhasePoint::new(q.to_vec(), p))
}

pub(crate) fn flow_rhs<M: Hamiltonian + ?Sized>(model: &M, lambda: f64, y: &[f64], dy: &mut [f64]) {
    let d = model.dim();
    let (q, p) = y.split_at(d);
    let (dq, dp) = dy.split_at_mut(d);
    model.gradient(q, p, dp, dq);
    for i in 0..d {
        dp[i] = -dp[i] - lambda * p[i];
    }
}

/// Right-hand side of the flow together with its linearization on a frame.
/// State layout: `q, p, X (column-major), Y (column-major)`.
/// `h` is scratch space for the Hessian.
pub(crate) fn variational_rhs<M: Hamiltonian + ?Sized>(
    model: &M,
    lambda: f64,
    y: &[f64],
    dy: &mut [f64],
    h: &mut HessianBlocks,
) {
    let d = model.dim();
    flow_rhs(model, lambda, &y[..2 * d], &mut dy[..2 * d]);
    let (q, p) = y[..2 * d].split_at(d);
    frame_rhs(model, lambda, q, p, &y[2 * d..2 * d + 2 * d * d], &mut dy[2 * d..2 * d + 2 * d * d], h);
}

/// Linearized flow at `(q, p)` applied to a frame `X, Y` (column-major).
pub(crate) fn frame_rhs<M: Hamiltonian + ?Sized>(
    model: &M,
    lambda: f64,
    q: &[f64],
    p: &[f64],
    frame: &[f64],
    dframe: &mut [f64],
    h: &mut HessianBlocks,
) {
    let d = model.dim();
    model.hessian_into(q, p, h);
    let (x, yy) = frame.split_at(d * d);
    let (dx, dyy) = dframe.split_at_mut(d * d);
    for col in 0..d {
        for i in 0..d {
            let mut ax = 0.0;
            let mut ay = -lambda * yy[col * d + i];
            for k in 0..d {
                let xk = x[col * d + k];
                let yk = yy[col * d + k];
                // H_pq = H_qpᵀ
                ax += h.qp[(k, i)] * xk + h.pp[(i, k)] * yk;
                ay += -h.qq[(i, k)] * xk - h.qp[(i, k)] * yk;
            }
            dx[col * d + i] = ax;
            dyy[col * d + i] = ay;
        }
    }
}

pub(crate) fn pack(x: &PhasePoint, frame: Option<&TangentFrame>) -> Vec<f64> {
    let mut s = Vec::with_capacity(2 * x.dim() + 2 * x.dim() * x.dim());
    s.extend_from_slice(&x.q);
    s.extend_from_slice(&x.p);
    if let Some(f) = frame {
        s.extend_from_slice(f.x.as_slice());
        s.extend_from_slice(f.y.as_slice());
    }
    s
}

pub(crate) fn unpack_point(s: &[f64], d: usize) -> PhasePoint {
    PhasePoint::new(s[..d].to_vec(), s[d..2 * d].to_vec())
}

pub(crate) fn unpack_frame(s: &[f64], d: usize) -> TangentFrame {
    let o = 2 * d;
    TangentFrame {
        x: DMatrix::from_column_slice(d, d, &s[o..o + d * d]),
        y: DMatrix::from_column_slice(d, d, &s[o + d * d..o + 2 * d * d]),
    }
}

pub(crate) fn wrap_state(s: &mut [f64], d: usize) {
    for q in &mut s[..d] {
        *q = wrap(*q);
    }
}

fn check_dims<M: Hamiltonian + ?Sized>(model: &M, x: &PhasePoint) -> Result<()> {
    if x.q.len() != model.dim() || x.p.len() != model.dim() {
        return Err(Error::input(format!(
            "phase point has dimension ({}, {}), model has {}",
            x.q.len(),
            x.p.len(),
            model.dim()
        )));
    }
    check_finite(&x.q, "phase point q")?;
    check_finite(&x.p, "phase point p")
}

/// `φ_t^λ(x)`; negative `t` integrates backward.
pub fn integrate_flow<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    params: &FlowParams,
) -> Result<PhasePoint> {
    params.validate()?;
    check_dims(model, x)?;
    let d = model.dim();
    let mut s = pack(x, None);
    params.solver().integrate(
        &mut s,
        t,
        |y, dy| flow_rhs(model, params.lambda, y, dy),
        |_, y| {
            wrap_state(y, d);
            Control::Continue
        },
    )?;
    Ok(unpack_point(&s, d))
}

/// Samples `φ_s^λ(x)` at `steps + 1` uniformly spaced times `s = k t / steps`.
pub fn sample_orbit<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    steps: usize,
    params: &FlowParams,
) -> Result<Vec<PhasePoint>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.clone());
    if steps == 0 {
        return Ok(out);
    }
    let dt = t / steps as f64;
    let mut cur = x.clone();
    for _ in 0..steps {
        cur = integrate_flow(model, &cur, dt, params)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Propagates `x` and the plane spanned by `frame` under the linearized flow.
pub fn integrate_with_tangent<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    params: &FlowParams,
    frame: &TangentFrame,
) -> Result<(PhasePoint, TangentFrame)> {
    params.validate()?;
    check_dims(model, x)?;
    let d = model.dim();
    if frame.dim() != d {
        return Err(Error::input("frame dimension does not match model"));
    }
    if frame.conditioning() < 1e-24 {
        return Err(Error::Degenerate { time: 0.0 });
    }
    let mut s = pack(x, Some(frame));
    let mut collapsed = None;
    let mut h = HessianBlocks::zeros(d);
    params.solver().integrate(
        &mut s,
        t,
        |y, dy| variational_rhs(model, params.lambda, y, dy, &mut h),
        |time, y| {
            wrap_state(y, d);
            if d > 1 && unpack_frame(y, d).conditioning() < 1e-24 {
                collapsed = Some(time);
                return Control::Stop;
            }
            Control::Continue
        },
    )?;
    if let Some(time) = collapsed {
        return Err(Error::Degenerate { time });
    }
    let f = unpack_frame(&s, d);
    if f.conditioning() < 1e-24 {
        return Err(Error::Degenerate { time: t });
    }
    Ok((unpack_point(&s, d), f))
}

/// A curve sampled on a uniform time mesh: positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub dt: f64,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Max over interior nodes of the central-difference residual of the
/// discounted Euler-Lagrange equation
/// `d/dt ∂L/∂v - ∂L/∂q + λ ∂L/∂v = 0`.
pub fn euler_lagrange_residual<M: Hamiltonian + ?Sized>(
    model: &M,
    curve: &SampledPath,
    lambda: f64,
) -> Result<f64> {
    let n = curve.q.len();
    if n < 5 {
        return Err(Error::input(format!("path has {n} nodes, need at least 5")));
    }
    if curve.v.len() != n {
        return Err(Error::input("position and velocity samples differ in length"));
    }
    if !(curve.dt > 0.0) {
        return Err(Error::input("time step must be positive"));
    }
    let d = model.dim();
    let lv: Vec<Vec<f64>> = curve
        .q
        .iter()
        .zip(&curve.v)
        .map(|(q, v)| {
            let mut out = vec![0.0; d];
            model.lagrangian_dv(q, v, &mut out);
            out
        })
        .collect();
    let mut lq = vec![0.0; d];
    let mut worst = 0.0_f64;
    for k in 1..n - 1 {
        model.lagrangian_dq(&curve.q[k], &curve.v[k], &mut lq);
        let r: f64 = (0..d)
            .map(|i| {
                let dlv = (lv[k + 1][i] - lv[k - 1][i]) / (2.0 * curve.dt);
                (dlv - lq[i] + lambda * lv[k][i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Cap on the doubling search in [`velocity_bound`].
pub const VELOCITY_BOUND_CAP: f64 = 1e8;

/// Speed bound for minimizers over horizon `t` computed directly at `t`.
pub fn velocity_bound_at<M: Hamiltonian + ?Sized>(model: &M, t: f64, lambda: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::input("velocity bound horizon must be positive"));
    }
    let d = model.dim();
    let diam = (d as f64).sqrt() / 2.0;
    let qs = probe_positions(d);
    let dirs = probe_directions(d);
    let v = |q: &[f64], dir: &[f64], r: f64| -> f64 {
        let vel: Vec<f64> = dir.iter().map(|x| x * r).collect();
        model.lagrangian(q, &vel)
    };

    let r0 = diam / t;
    let mut m_l = f64::NEG_INFINITY;
    for q in &qs {
        for dir in &dirs {
            for j in 0..=8 {
                m_l = m_l.max(v(q, dir, r0 * j as f64 / 8.0));
            }
        }
    }
    let eps = 0.1 * (1.0 + m_l.abs());
    let threshold = (m_l + eps) * (1.0 + ((lambda + eps) * t).exp()) + eps;

    let mut r = 2.0 * diam / t;
    loop {
        let lowest = qs
            .iter()
            .flat_map(|q| dirs.iter().map(move |dir| (q, dir)))
            .map(|(q, dir)| v(q, dir, r))
            .fold(f64::INFINITY, f64::min);
        if lowest > threshold {
            return Ok(r);
        }
        r *= 2.0;
        if r > VELOCITY_BOUND_CAP || !r.is_finite() {
            return Err(Error::Unbounded {
                cap: VELOCITY_BOUND_CAP,
            });
        }
    }
}

/// Speed bound `R` such that every minimizer over a horizon `≥ t` has speed
/// at most `R`.
///
/// A minimizer over a longer horizon restricts to a minimizer over any
/// shorter sub-window, so the bound is the minimum of [`velocity_bound_at`]
/// over the fixed ladder `2^{j/4} ≤ t`, `j ≥ -40`. It is nonincreasing in `t`.
pub fn velocity_bound<M: Hamiltonian + ?Sized>(model: &M, t: f64, lambda: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::input("velocity bound horizon must be positive"));
    }
    let j_top = (4.0 * t.log2()).floor() as i64;
    if j_top < -40 {
        return velocity_bound_at(model, t, lambda);
    }
    let mut best = f64::INFINITY;
    let mut last_err = None;
    for j in -40..=j_top {
        let tj = 2f64.powf(j as f64 / 4.0);
        match velocity_bound_at(model, tj, lambda) {
            Ok(r) => best = best.min(r),
            Err(e) => last_err = Some(e),
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(last_err.unwrap_or(Error::Unbounded {
            cap: VELOCITY_BOUND_CAP,
        }))
    }
}

fn probe_positions(d: usize) -> Vec<Vec<f64>> {
    let per_axis: usize = match d {
        1 => 64,
        2 => 16,
        3 => 6,
        _ => 3,
    };
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    i as f64 / per_axis as f64
                })
                .collect()
        })
        .collect()
}

fn probe_directions(d: usize) -> Vec<Vec<f64>> {
    // Unit vectors with entries in {-1, 0, 1}, normalized.
    let total = 3usize.pow(d as u32);
    (0..total)
        .filter_map(|mut idx| {
            let raw: Vec<f64> = (0..d)
                .map(|_| {
                    let s = (idx % 3) as f64 - 1.0;
                    idx /= 3;
                    s
                })
                .collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            (norm > 0.0).then(|| raw.iter().map(|x| x / norm).collect())
        })
        .collect()
}
