//! Pushed vertical planes, their heights, the limit Green bundles and
//! conjugate-point detection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    flow_rhs, frame_rhs, integrate_flow, nearest_image, pack, unpack_frame, unpack_point, variational_rhs,
    wrap_state, Control, Dopri5, FlowParams, Hamiltonian, HessianBlocks, PhasePoint, TangentFrame,
};
use crate::error::{Error, Result};
use crate::lo_solver::GridFunction;
use crate::semiconcave::{numeric_gradient, numeric_hessian, sym_eigenvalues};

/// Column norms of the stacked frame outside this band trigger a QR reset.
const RENORM_LO: f64 = 1e-4;
const RENORM_HI: f64 = 1e4;
/// Time resolution of conjugate-point bisection.
const BISECT_RES: f64 = 1e-8;
/// Largest phase-space mismatch accepted after integrating an orbit piece
/// back and forth.
const ROUND_TRIP_TOL: f64 = 1e-6;

/// Symmetric height of a Lagrangian plane transverse to the vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMatrix {
    pub matrix: DMatrix<f64>,
    /// `‖S − Sᵀ‖` before symmetrization.
    pub asymmetry: f64,
}

impl HeightMatrix {
    fn from_frame(frame: &TangentFrame) -> Result<Self> {
        let d = frame.x.nrows();
        let lu = frame.x.transpose().lu();
        // S = Y X⁻¹, i.e. Xᵀ Sᵀ = Yᵀ.
        let st = lu
            .solve(&frame.y.transpose())
            .ok_or_else(|| Error::Singular("horizontal block of the frame is singular".into()))?;
        let s = st.transpose();
        let asym = (&s - s.transpose()).norm();
        let sym = (&s + s.transpose()) * 0.5;
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { what: "height matrix".into() });
        }
        let _ = d;
        Ok(Self {
            matrix: sym,
            asymmetry: asym,
        })
    }

    pub fn scalar(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::input("height must be a non-empty square matrix"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("height entries must be finite"));
        }
        let m = DMatrix::from_row_slice(d, d, &flat);
        let asym = (&m - m.transpose()).norm();
        Ok(Self {
            matrix: (&m + m.transpose()) * 0.5,
            asymmetry: asym,
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eig_extremes(&self.matrix).0
    }
}

fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let d = m.nrows();
    let flat: Vec<f64> = m.transpose().iter().copied().collect();
    let ev = sym_eigenvalues(&flat, d);
    (ev[0], ev[d - 1])
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eig_extremes(m);
    lo.abs().max(hi.abs())
}

/// Numerical settings shared by the Green-bundle computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreenOptions {
    /// First horizon of the doubling schedule.
    pub t_start: f64,
    pub t_max: f64,
    /// Cauchy gap below which the limit is declared converged.
    pub tol: f64,
    /// Integrator tolerance.
    pub flow_tol: f64,
    pub dt_max: f64,
    /// Slack for the monotone-decrease assertion during the sweep.
    pub monotone_slack: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self {
            t_start: 1.0,
            t_max: 16384.0,
            tol: 1e-6,
            flow_tol: 1e-12,
            dt_max: 0.05,
            monotone_slack: 1e-7,
        }
    }
}

impl GreenOptions {
    fn flow(&self, lambda: f64) -> FlowParams {
        FlowParams {
            lambda,
            dt_max: self.dt_max,
            tol: self.flow_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.t_start) || !ok(self.t_max) || self.t_max < self.t_start {
            return Err(Error::config("green.t_max", "need 0 < t_start <= t_max"));
        }
        if !ok(self.tol) || !ok(self.flow_tol) || !ok(self.dt_max) || !(self.monotone_slack >= 0.0) {
            return Err(Error::config("green.tol", "tolerances must be positive"));
        }
        Ok(())
    }
}

struct Propagation {
    /// Brackets `(a, b)` of elapsed time where `det X` changed sign.
    crossings: Vec<(f64, f64, Vec<f64>)>,
    min_abs_det: f64,
}

fn orthonormal_det(frame: &TangentFrame) -> f64 {
    let d = frame.x.nrows();
    let mut stacked = DMatrix::zeros(2 * d, d);
    stacked.view_mut((0, 0), (d, d)).copy_from(&frame.x);
    stacked.view_mut((d, 0), (d, d)).copy_from(&frame.y);
    let q = stacked.qr().q();
    q.view((0, 0), (d, d)).into_owned().determinant()
}

/// Replaces the frame by an orthonormal basis of the same plane, keeping the
/// sign of `det X`.
fn renormalize(state: &mut [f64], d: usize) {
    let frame = unpack_frame(state, d);
    let mut stacked = DMatrix::zeros(2 * d, d);
    stacked.view_mut((0, 0), (d, d)).copy_from(&frame.x);
    stacked.view_mut((d, 0), (d, d)).copy_from(&frame.y);
    let qr = stacked.qr();
    let mut q = qr.q();
    if qr.r().determinant() < 0.0 {
        let mut col = q.column_mut(0);
        col *= -1.0;
    }
    let x = q.view((0, 0), (d, d)).into_owned();
    let y = q.view((d, 0), (d, d)).into_owned();
    let base = 2 * d;
    for j in 0..d {
        for i in 0..d {
            state[base + j * d + i] = x[(i, j)];
            state[base + d * d + j * d + i] = y[(i, j)];
        }
    }
}

fn needs_renorm(state: &[f64], d: usize) -> bool {
    let base = 2 * d;
    (0..d).any(|j| {
        let mut s = 0.0;
        for i in 0..d {
            s += state[base + j * d + i].powi(2) + state[base + d * d + j * d + i].powi(2);
        }
        let n = s.sqrt();
        !(RENORM_LO..=RENORM_HI).contains(&n)
    })
}

fn det_x(state: &[f64], d: usize) -> f64 {
    let x = &state[2 * d..2 * d + d * d];
    match d {
        1 => x[0],
        2 => x[0] * x[3] - x[2] * x[1],
        _ => DMatrix::from_column_slice(d, d, x).determinant(),
    }
}

fn tidy(y: &mut [f64], d: usize) {
    wrap_state(y, d);
    if needs_renorm(y, d) {
        renormalize(y, d);
    }
}

/// Sign changes of `det X` over accepted steps.
#[derive(Default)]
struct CrossingTracker {
    prev: Option<(f64, f64, Vec<f64>)>,
    crossings: Vec<(f64, f64, Vec<f64>)>,
    /// Smallest `|det X|` of the orthonormalized frame, when requested.
    min_abs_det: Option<f64>,
}

impl CrossingTracker {
    fn with_min_det() -> Self {
        Self {
            min_abs_det: Some(f64::INFINITY),
            ..Self::default()
        }
    }

    fn observe(&mut self, time: f64, y: &[f64], d: usize) {
        let det = det_x(y, d);
        if let Some(m) = self.min_abs_det.as_mut() {
            *m = m.min(orthonormal_det(&unpack_frame(y, d)).abs());
        }
        let mut sign = det;
        if let Some((pt, pdet, pstate)) = self.prev.as_mut() {
            if det == 0.0 || det.signum() != pdet.signum() {
                self.crossings.push((*pt, time, pstate.clone()));
            }
            if det == 0.0 {
                sign = -*pdet;
            }
            *pt = time;
            *pdet = sign;
            pstate.copy_from_slice(y);
        } else {
            self.prev = Some((time, if det == 0.0 { 1.0 } else { det }, y.to_vec()));
        }
    }
}

/// Integrates point and frame jointly for signed time `t`, tracking sign
/// changes of `det X` after the first accepted step.
fn propagate<M: Hamiltonian + ?Sized>(
    model: &M,
    start: &PhasePoint,
    frame: &TangentFrame,
    t: f64,
    params: &FlowParams,
) -> Result<Propagation> {
    params.validate()?;
    let d = model.dim();
    let mut state = pack(start, Some(frame));
    let mut tracker = CrossingTracker::with_min_det();
    let mut h = HessianBlocks::zeros(d);
    params.solver().integrate(
        &mut state,
        t,
        |y, dy| variational_rhs(model, params.lambda, y, dy, &mut h),
        |time, y| {
            tidy(y, d);
            tracker.observe(time, y, d);
            Control::Continue
        },
    )?;
    Ok(Propagation {
        crossings: tracker.crossings,
        min_abs_det: tracker.min_abs_det.unwrap_or(f64::INFINITY),
    })
}

/// Refines a sign change of `det X` bracketed by `(a, b)` with the state at `a`.
fn bisect_crossing<F: FnMut(&[f64], &mut [f64])>(
    d: usize,
    params: &FlowParams,
    mut rhs: F,
    a: f64,
    b: f64,
    state_a: &[f64],
) -> Result<f64> {
    let (mut lo, mut hi) = (a, b);
    let mut lo_state = state_a.to_vec();
    let lo_sign = det_x(&lo_state, d).signum();
    while (hi - lo).abs() > BISECT_RES {
        let mid = 0.5 * (lo + hi);
        let mut s = lo_state.clone();
        params.solver().integrate(&mut s, mid - lo, &mut rhs, |_, y| {
            tidy(y, d);
            Control::Continue
        })?;
        if det_x(&s, d).signum() == lo_sign {
            lo = mid;
            lo_state = s;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dense samples of an orbit piece for cubic Hermite interpolation, in
/// signed time measured from the first sample.
struct OrbitPiece {
    d: usize,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    rates: Vec<Vec<f64>>,
}

impl OrbitPiece {
    fn integrate<M: Hamiltonian + ?Sized>(model: &M, start: &[f64], span: f64, params: &FlowParams) -> Result<Self> {
        let d = model.dim();
        let rate = |y: &[f64]| {
            let mut dy = vec![0.0; 2 * d];
            flow_rhs(model, params.lambda, y, &mut dy);
            dy
        };
        let mut piece = OrbitPiece {
            d,
            times: vec![0.0],
            states: vec![start.to_vec()],
            rates: vec![rate(start)],
        };
        let mut y = start.to_vec();
        params.solver().integrate(
            &mut y,
            span,
            |y, dy| flow_rhs(model, params.lambda, y, dy),
            |time, y| {
                wrap_state(y, d);
                piece.times.push(time);
                piece.states.push(y.to_vec());
                piece.rates.push(rate(y));
                Control::Continue
            },
        )?;
        Ok(piece)
    }

    fn end(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or_default()
    }

    /// State and rate at signed offset `tau`, clamped to the piece.
    fn eval(&self, tau: f64, y: &mut [f64], dy: &mut [f64]) {
        let dir = self.times.last().map_or(1.0, |t| if *t < 0.0 { -1.0 } else { 1.0 });
        let r = dir * tau;
        let last = self.times.len() - 1;
        let i = self.times.partition_point(|t| dir * t <= r).clamp(1, last.max(1)) - 1;
        if last == 0 {
            y.copy_from_slice(&self.states[0]);
            dy.copy_from_slice(&self.rates[0]);
            return;
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let u = ((tau - t0) / h).clamp(0.0, 1.0);
        let (u2, u3) = (u * u, u * u * u);
        let (h00, h10, h01, h11) = (2.0 * u3 - 3.0 * u2 + 1.0, u3 - 2.0 * u2 + u, -2.0 * u3 + 3.0 * u2, u3 - u2);
        let (g00, g10, g01, g11) = (6.0 * u2 - 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, -6.0 * u2 + 6.0 * u, 3.0 * u2 - 2.0 * u);
        let (a, b) = (&self.states[i], &self.states[i + 1]);
        let (fa, fb) = (&self.rates[i], &self.rates[i + 1]);
        for k in 0..2 * self.d {
            // Positions are stored reduced; unwrap the right end against the left.
            let bk = if k < self.d { a[k] + nearest_image(b[k] - a[k]) } else { b[k] };
            y[k] = h00 * a[k] + h10 * h * fa[k] + h01 * bk + h11 * h * fb[k];
            dy[k] = (g00 * a[k] + g01 * bk) / h + g10 * fa[k] + g11 * fb[k];
        }
    }
}

/// Time between orbit checkpoints in the frame transport.
const CHECKPOINT_SPAN: f64 = 1.0;

/// Height of `Dφ_{±t} V(φ_{∓t} x)` together with the round-trip mismatch.
///
/// The frame is transported along the orbit of `x` integrated in the
/// direction of `−t` and replayed piece by piece from checkpoints, so it
/// arrives exactly at `x`. The mismatch is the largest error of a piece
/// integrated back to its starting checkpoint.
fn pushed_vertical<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    params: &FlowParams,
) -> Result<(HeightMatrix, f64)> {
    params.validate()?;
    let d = model.dim();
    let pieces = (t.abs() / CHECKPOINT_SPAN).ceil().max(1.0) as usize;
    let span = -t / pieces as f64;
    let flow = |y: &mut Vec<f64>, span: f64| {
        params.solver().integrate(
            y,
            span,
            |y, dy| flow_rhs(model, params.lambda, y, dy),
            |_, y| {
                wrap_state(y, d);
                Control::Continue
            },
        )
    };
    let mut checkpoints = vec![pack(x, None)];
    let mut mismatch: f64 = 0.0;
    for k in 0..pieces {
        let mut y = checkpoints[k].clone();
        flow(&mut y, span)?;
        let mut back = y.clone();
        flow(&mut back, -span)?;
        mismatch = mismatch.max(phase_distance(&unpack_point(&back, d), &unpack_point(&checkpoints[k], d)));
        checkpoints.push(y);
    }
    let far = unpack_point(&checkpoints[pieces], d);

    // Transport state: point (held fixed), frame, elapsed time.
    let mut state = pack(&far, Some(&TangentFrame::vertical(d)));
    state.push(0.0);
    let mut tracker = CrossingTracker::default();
    for k in (0..pieces).rev() {
        // Piece from checkpoint k (closer to x) to checkpoint k + 1.
        let piece = OrbitPiece::integrate(model, &checkpoints[k], span, params)?;
        debug_assert_eq!(piece.end(), checkpoints[k + 1].as_slice());
        let start = (pieces - 1 - k) as f64 * -span;
        let mut base = vec![0.0; 2 * d];
        let mut rate = vec![0.0; 2 * d];
        let mut h = HessianBlocks::zeros(d);
        let mut rhs = |y: &[f64], dy: &mut [f64]| {
            let elapsed = y[y.len() - 1];
            // Offset within the piece: elapsed time `start` sits at its far end.
            let tau = span + (elapsed - start);
            let (head, tail) = dy.split_at_mut(2 * d);
            // The point is pinned at the piece ends; only the frame is integrated.
            piece.eval(tau, &mut base, &mut rate);
            head.fill(0.0);
            let (q, p) = base.split_at(d);
            let n = tail.len();
            frame_rhs(model, params.lambda, q, p, &y[2 * d..n + 2 * d - 1], &mut tail[..n - 1], &mut h);
            tail[n - 1] = 1.0;
        };
        params.solver().integrate(&mut state, -span, &mut rhs, |time, y| {
            tidy(y, d);
            tracker.observe(start + time, y, d);
            Control::Continue
        })?;
        if let Some((a, b, at)) = tracker.crossings.first() {
            let (a, b) = (*a - start, *b - start);
            let time = bisect_crossing(d, params, &mut rhs, a, b, at)?;
            return Err(Error::ConjugatePoint {
                time: (start + time).abs(),
            });
        }
        // Pin the point to the checkpoint so pieces join exactly.
        state[..2 * d].copy_from_slice(&checkpoints[k]);
    }
    Ok((HeightMatrix::from_frame(&unpack_frame(&state, d))?, mismatch))
}

fn phase_distance(a: &PhasePoint, b: &PhasePoint) -> f64 {
    a.distance(b)
}

/// Height of `G_t(x) = Dφ_t V(φ_{−t} x)` for `t > 0`.
pub fn height_of_pushed_vertical<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    lambda: f64,
) -> Result<HeightMatrix> {
    height_of_pushed_vertical_with(model, x, t, lambda, &GreenOptions::default())
}

pub fn height_of_pushed_vertical_with<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    lambda: f64,
    opts: &GreenOptions,
) -> Result<HeightMatrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::input(format!("horizon t = {t} must be positive")));
    }
    Ok(pushed_vertical(model, x, t, &opts.flow(lambda))?.0)
}

/// Height of `G_{−t}(x) = Dφ_{−t} V(φ_t x)` for `t > 0`.
pub fn height_of_pulled_vertical<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    lambda: f64,
    opts: &GreenOptions,
) -> Result<HeightMatrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::input(format!("horizon t = {t} must be positive")));
    }
    Ok(pushed_vertical(model, x, -t, &opts.flow(lambda))?.0)
}

/// Height obtained by integrating the matrix Riccati equation from the
/// seed `S(s₀) = H_pp⁻¹ / s₀` placed `s₀` after `φ_{−t} x`.
pub fn height_via_riccati<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    t: f64,
    lambda: f64,
    s0: f64,
) -> Result<HeightMatrix> {
    if !(t > s0) || !(s0 > 0.0) {
        return Err(Error::input("need 0 < s0 < t"));
    }
    let params = FlowParams {
        lambda,
        dt_max: 0.05,
        tol: 1e-12,
    };
    let d = model.dim();
    let base = integrate_flow(model, x, -t, &params)?;
    let seed_point = integrate_flow(model, &base, s0, &params)?;
    let hpp = model.hessian(&seed_point.q, &seed_point.p).pp;
    let inv = hpp
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("H_pp is not invertible".into()))?;
    let seed = inv / s0;
    let mut state = Vec::with_capacity(2 * d + d * d);
    state.extend_from_slice(&seed_point.q);
    state.extend_from_slice(&seed_point.p);
    for j in 0..d {
        for i in 0..d {
            state.push(seed[(i, j)]);
        }
    }
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let (q, rest) = y.split_at(d);
        let (p, s) = rest.split_at(d);
        let mut hq = vec![0.0; d];
        let mut hp = vec![0.0; d];
        model.gradient(q, p, &mut hq, &mut hp);
        for i in 0..d {
            dy[i] = hp[i];
            dy[d + i] = -hq[i] - lambda * p[i];
        }
        let h = model.hessian(q, p);
        let sm = DMatrix::from_column_slice(d, d, s);
        let pq = h.qp.transpose();
        let ds = -&h.qq - &h.qp * &sm - &sm * &pq - &sm * &h.pp * &sm - &sm * lambda;
        dy[2 * d..].copy_from_slice(ds.as_slice());
    };
    Dopri5 { tol: 1e-12, dt_max: 0.05 }.integrate(&mut state, t - s0, rhs, |_, y| {
        for v in y.iter_mut().take(d) {
            *v = crate::dynamics::wrap(*v);
        }
        Control::Continue
    })?;
    let s = DMatrix::from_column_slice(d, d, &state[2 * d..]);
    let asym = (&s - s.transpose()).norm();
    Ok(HeightMatrix {
        matrix: (&s + s.transpose()) * 0.5,
        asymmetry: asym,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenResult {
    pub height: HeightMatrix,
    pub t_used: f64,
    pub converged: bool,
    pub cauchy_gap: f64,
}

fn green_limit<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    lambda: f64,
    opts: &GreenOptions,
    sign: f64,
) -> Result<GreenResult> {
    opts.validate()?;
    let params = opts.flow(lambda);
    let mut t = opts.t_start;
    let (first, mismatch) = pushed_vertical(model, x, sign * t, &params)?;
    if mismatch > ROUND_TRIP_TOL {
        return Err(Error::Integration { reached: -sign * t });
    }
    let mut last = first;
    let mut result = GreenResult {
        height: last.clone(),
        t_used: t,
        converged: false,
        cauchy_gap: f64::INFINITY,
    };
    while 2.0 * t <= opts.t_max * (1.0 + 1e-12) {
        let next_t = 2.0 * t;
        let (next, mismatch) = pushed_vertical(model, x, sign * next_t, &params)?;
        if mismatch > ROUND_TRIP_TOL {
            // The orbit can no longer be resolved over this horizon.
            break;
        }
        // Past heights decrease toward G_+, future heights increase toward G_−.
        let step = (&next.matrix - &last.matrix) * sign;
        let (_, top) = eig_extremes(&step);
        let slack = opts.monotone_slack * (1.0 + spectral_norm(&last.matrix));
        if top > slack {
            return Err(Error::Property(format!(
                "heights not monotone between t = {t} and t = {next_t} (excess {top:e})"
            )));
        }
        let gap = spectral_norm(&(&next.matrix - &last.matrix));
        t = next_t;
        result = GreenResult {
            height: next.clone(),
            t_used: t,
            converged: gap <= opts.tol,
            cauchy_gap: gap,
        };
        last = next;
        if result.converged {
            break;
        }
    }
    Ok(result)
}

/// `G_+(x)`, the limit of `G_t(x)` as `t → ∞`, on a doubling schedule.
pub fn green_plus<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    lambda: f64,
    opts: &GreenOptions,
) -> Result<GreenResult> {
    green_limit(model, x, lambda, opts, 1.0)
}

/// `G_−(x)`, the limit of `G_{−t}(x)` as `t → ∞`.
pub fn green_minus<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    lambda: f64,
    opts: &GreenOptions,
) -> Result<GreenResult> {
    green_limit(model, x, lambda, opts, -1.0)
}

/// Heights sampled on both sides of a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightSample {
    /// Positive lag: `H(G_lag)` on the past side, `H(G_{−lag})` on the future side.
    pub lag: f64,
    pub height: Vec<Vec<f64>>,
}

/// Past and future height sequences, the input of the monotonicity test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightFixture {
    pub past: Vec<HeightSample>,
    pub future: Vec<HeightSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub passed: bool,
    pub violations: Vec<String>,
    /// Smallest eigenvalue margin seen over all comparisons.
    pub worst_margin: f64,
}

fn to_matrix(sample: &HeightSample) -> Result<DMatrix<f64>> {
    Ok(HeightMatrix::from_rows(&sample.height)?.matrix)
}

/// Checks that `s ↦ H(G_{t−s})` increases on each side of `t` and that every
/// past height dominates every future height, up to eigenvalue slack `tol`.
pub fn check_height_sequence(fixture: &HeightFixture, tol: f64) -> Result<MonotonicityReport> {
    let mut past: Vec<(f64, DMatrix<f64>)> =
        fixture.past.iter().map(|s| Ok((s.lag, to_matrix(s)?))).collect::<Result<_>>()?;
    let mut future: Vec<(f64, DMatrix<f64>)> =
        fixture.future.iter().map(|s| Ok((s.lag, to_matrix(s)?))).collect::<Result<_>>()?;
    let d = past.first().or(future.first()).map(|s| s.1.nrows()).unwrap_or(1);
    if past.iter().chain(&future).any(|s| s.1.nrows() != d || !(s.0 > 0.0)) {
        return Err(Error::input("heights must share a dimension and have positive lags"));
    }
    past.sort_by(|a, b| a.0.total_cmp(&b.0));
    future.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    let mut check = |diff: DMatrix<f64>, what: String| {
        let margin = eig_extremes(&diff).0;
        worst = worst.min(margin);
        if margin < -tol {
            violations.push(format!("{what}: smallest eigenvalue {margin:e}"));
        }
    };
    for w in past.windows(2) {
        check(&w[0].1 - &w[1].1, format!("past lag {} vs {}", w[0].0, w[1].0));
    }
    for w in future.windows(2) {
        check(&w[1].1 - &w[0].1, format!("future lag {} vs {}", w[0].0, w[1].0));
    }
    for (a, sa) in &past {
        for (b, sb) in &future {
            check(sa - sb, format!("past lag {a} vs future lag {b}"));
        }
    }
    Ok(MonotonicityReport {
        passed: violations.is_empty(),
        violations,
        worst_margin: worst,
    })
}

/// Samples the height sequences at `x` for the given lags and checks them.
pub fn monotonicity_check<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    lambda: f64,
    times: &[f64],
    tol: f64,
) -> Result<(HeightFixture, MonotonicityReport)> {
    let opts = GreenOptions::default();
    let mut fixture = HeightFixture {
        past: Vec::new(),
        future: Vec::new(),
    };
    for &lag in times {
        let past = height_of_pushed_vertical_with(model, x, lag, lambda, &opts)?;
        let future = height_of_pulled_vertical(model, x, lag, lambda, &opts)?;
        fixture.past.push(HeightSample { lag, height: past.rows() });
        fixture.future.push(HeightSample { lag, height: future.rows() });
    }
    let report = check_height_sequence(&fixture, tol)?;
    Ok((fixture, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateReport {
    pub times: Vec<f64>,
    /// Smallest `|det X|` of the orthonormalized frame at accepted steps.
    pub min_abs_det: f64,
}

/// Zeros of `det X(s)` for the vertical at `x` pushed over `s ∈ (0, t]`.
pub fn detect_conjugate_points<M: Hamiltonian + ?Sized>(
    model: &M,
    x: &PhasePoint,
    lambda: f64,
    t: f64,
) -> Result<ConjugateReport> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::input(format!("window length {t} must be positive")));
    }
    let params = GreenOptions::default().flow(lambda);
    let prop = propagate(model, x, &TangentFrame::vertical(model.dim()), t, &params)?;
    let mut times = Vec::with_capacity(prop.crossings.len());
    for (a, b, state) in &prop.crossings {
        let mut h = HessianBlocks::zeros(model.dim());
        let rhs = move |y: &[f64], dy: &mut [f64]| variational_rhs(model, params.lambda, y, dy, &mut h);
        times.push(bisect_crossing(model.dim(), &params, rhs, *a, *b, state)?);
    }
    times.sort_by(f64::total_cmp);
    Ok(ConjugateReport {
        times,
        min_abs_det: prop.min_abs_det,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// `(node, ‖H(G) − D²u‖)` for every valid sample.
    pub discrepancies: Vec<(usize, f64)>,
    /// Fraction of valid samples whose discrepancy exceeds the tolerance.
    pub exceed_fraction: f64,
    /// Samples excluded because of conjugate points or unresolvable orbits.
    pub invalid: usize,
}

/// Which limit bundle a regularity test compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

/// Compares `D²u(θ)` with the height of `G_±(θ, c + du(θ))` at the sample
/// nodes (all Alexandrov nodes with reliable gradient when `samples` is `None`).
#[allow(clippy::too_many_arguments)]
pub fn green_regularity_test<M: Hamiltonian + ?Sized>(
    model: &M,
    u: &GridFunction,
    c: &[f64],
    lambda: f64,
    tol: f64,
    samples: Option<&[usize]>,
    side: Side,
    opts: &GreenOptions,
) -> Result<RegularityReport> {
    if u.dim() != model.dim() || c.len() != u.dim() {
        return Err(Error::input("grid, form and model dimensions differ"));
    }
    let grad = numeric_gradient(u);
    let hess = numeric_hessian(u);
    let default: Vec<usize>;
    let nodes = match samples {
        Some(s) => s,
        None => {
            default = (0..u.len()).filter(|&k| hess.is_alexandrov(k) && grad.is_reliable(k)).collect();
            &default
        }
    };
    let mut discrepancies = Vec::with_capacity(nodes.len());
    let mut invalid = 0;
    for &k in nodes {
        if k >= u.len() {
            return Err(Error::input(format!("sample node {k} outside the grid")));
        }
        let p: Vec<f64> = grad.central(k).iter().zip(c).map(|(g, ci)| g + ci).collect();
        let x = PhasePoint::new(u.point(k), p);
        let limit = match side {
            Side::Upper => green_plus(model, &x, lambda, opts),
            Side::Lower => green_minus(model, &x, lambda, opts),
        };
        match limit {
            Ok(r) => {
                let diff = &r.height.matrix - hess.matrix(k);
                discrepancies.push((k, spectral_norm(&diff)));
            }
            Err(Error::ConjugatePoint { .. }) | Err(Error::Integration { .. }) | Err(Error::Property(_)) => {
                invalid += 1
            }
            Err(e) => return Err(e),
        }
    }
    let exceed = discrepancies.iter().filter(|(_, v)| *v > tol).count();
    let exceed_fraction = if discrepancies.is_empty() {
        0.0
    } else {
        exceed as f64 / discrepancies.len() as f64
    };
    Ok(RegularityReport {
        discrepancies,
        exceed_fraction,
        invalid,
    })
}

pub fn upper_green_regularity_test<M: Hamiltonian + ?Sized>(
    model: &M,
    u: &GridFunction,
    c: &[f64],
    lambda: f64,
    tol: f64,
    samples: Option<&[usize]>,
    opts: &GreenOptions,
) -> Result<RegularityReport> {
    green_regularity_test(model, u, c, lambda, tol, samples, Side::Upper, opts)
}

pub fn lower_green_regularity_test<M: Hamiltonian + ?Sized>(
    model: &M,
    u: &GridFunction,
    c: &[f64],
    lambda: f64,
    tol: f64,
    samples: Option<&[usize]>,
    opts: &GreenOptions,
) -> Result<RegularityReport> {
    green_regularity_test(model, u, c, lambda, tol, samples, Side::Lower, opts)
}

#[cfg(test)]
mod tests;
