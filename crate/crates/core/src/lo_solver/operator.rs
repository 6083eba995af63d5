//! The discounted, cohomology-shifted Lax-Oleinik step on a grid.

use rayon::prelude::*;

use super::kernel::{discount_weight, lagrangian_integral, ActionKernel};
use super::{GridFunction, SolverConfig};
use crate::dynamics::Hamiltonian;
use crate::error::{Error, Result};

/// Action tables larger than this many entries are evaluated on the fly.
pub const TABLE_LIMIT: usize = 1 << 22;

/// Line search resolution, in cells.
const LINE_TOL: f64 = 1e-7;

/// Coordinate sweeps of the continuous polish in dimension two.
const POLISH_SWEEPS: usize = 2;

/// Fewest grid cells the admissible displacement must span.
pub const MIN_REACH_CELLS: usize = 3;

/// `T_τ u(q) = min_{q'} e^{-λτ} u(q') + A(q', q)` with `A` the one-step action
/// including the `-c·v + α` terms. Build once per configuration.
pub struct LoOperator<'a, M: Hamiltonian + ?Sized> {
    model: &'a M,
    n: usize,
    d: usize,
    h: f64,
    lambda: f64,
    c: Vec<f64>,
    alpha: f64,
    decay: f64,
    weight: f64,
    kernel: ActionKernel,
    times: Vec<f64>,
    weights: Vec<f64>,
    /// Largest offset per axis, in cells.
    reach: usize,
    /// Candidate offsets in dimension two.
    offsets: Vec<[i64; 2]>,
    /// Action per node and candidate; in dimension one indexed by half-cells.
    table: Option<Vec<f64>>,
}

impl<'a, M: Hamiltonian + ?Sized> LoOperator<'a, M> {
    /// Operator for `config` with the given `α` added to the integrand.
    pub fn new(model: &'a M, config: &SolverConfig, alpha: f64) -> Result<Self> {
        config.validate()?;
        let d = model.dim();
        if d == 0 || d > 2 {
            return Err(Error::input(format!("grids support dimension 1 or 2, model has {d}")));
        }
        let c = config.form(d)?;
        if !alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite"));
        }
        super::grid::point_count(config.n, d)?;
        let kernel = ActionKernel::for_model(
            model,
            config.tau,
            config.lambda,
            &c,
            config.quad_order,
            config.vel_bound_override,
        )?;
        let n = config.n;
        let h = 1.0 / n as f64;
        let reach = ((kernel.reach() / h) * (1.0 + 1e-12)).floor().min((n / 2) as f64) as usize;
        if reach < MIN_REACH_CELLS {
            return Err(Error::config(
                if config.vel_bound_override.is_some() { "vel_bound_override" } else { "tau" },
                format!(
                    "admissible displacement {:.3e} spans {reach} grid cells, need {MIN_REACH_CELLS}",
                    kernel.reach()
                ),
            ));
        }
        let (times, weights) = kernel.discounted_rule(config.lambda);
        let mut op = Self {
            model,
            n,
            d,
            h,
            lambda: config.lambda,
            c,
            alpha,
            decay: (-config.lambda * config.tau).exp(),
            weight: discount_weight(config.tau, config.lambda),
            kernel,
            times,
            weights,
            reach,
            offsets: Vec::new(),
            table: None,
        };
        if d == 2 {
            let r2 = (op.kernel.reach() / h).powi(2) * (1.0 + 1e-12);
            let r = reach as i64;
            for j1 in -r..=r {
                for j2 in -r..=r {
                    if ((j1 * j1 + j2 * j2) as f64) <= r2 {
                        op.offsets.push([j1, j2]);
                    }
                }
            }
        }
        let per_node = op.per_node();
        if n.pow(d as u32).saturating_mul(per_node) <= TABLE_LIMIT {
            op.table = Some(op.build_table());
        }
        Ok(op)
    }

    fn per_node(&self) -> usize {
        if self.d == 1 {
            4 * self.reach + 1
        } else {
            self.offsets.len()
        }
    }

    fn build_table(&self) -> Vec<f64> {
        let len = self.n.pow(self.d as u32);
        let per = self.per_node();
        let mut table = vec![0.0; len * per];
        table.par_chunks_mut(per).enumerate().for_each(|(k, row)| {
            let q = self.node(k);
            let mut scratch = [0.0; 2];
            for (slot, value) in row.iter_mut().enumerate() {
                let disp = self.slot_displacement(slot);
                *value = self.action_at(&q[..self.d], &disp[..self.d], &mut scratch);
            }
        });
        table
    }

    fn node(&self, k: usize) -> [f64; 2] {
        [(k % self.n) as f64 * self.h, (k / self.n % self.n) as f64 * self.h]
    }

    fn slot_displacement(&self, slot: usize) -> [f64; 2] {
        if self.d == 1 {
            [(slot as f64 * 0.5 - self.reach as f64) * self.h, 0.0]
        } else {
            let [a, b] = self.offsets[slot];
            [a as f64 * self.h, b as f64 * self.h]
        }
    }

    /// Action of the straight segment arriving at `q` with displacement
    /// `disp`, without the `α` term.
    fn action_at(&self, q: &[f64], disp: &[f64], scratch: &mut [f64; 2]) -> f64 {
        let l = lagrangian_integral(
            self.model,
            q,
            disp,
            self.kernel.tau,
            &self.times,
            &self.weights,
            &mut scratch[..self.d],
        );
        let cv: f64 = self.c.iter().zip(disp).map(|(c, x)| c * x).sum::<f64>() / self.kernel.tau;
        l - self.weight * cv
    }

    pub fn kernel(&self) -> &ActionKernel {
        &self.kernel
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn form(&self) -> &[f64] {
        &self.c
    }

    /// Largest displacement searched per axis, in cells.
    pub fn reach_cells(&self) -> usize {
        self.reach
    }

    /// `e^{-λτ}`.
    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Same operator with a different additive constant.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn step(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.n() != self.n || u.dim() != self.d {
            return Err(Error::input(format!(
                "grid {}^{} does not match operator grid {}^{}",
                u.n(),
                u.dim(),
                self.n,
                self.d
            )));
        }
        // Working relative to the minimum keeps T(u + k) = T u + e^{-λτ} k
        // exact up to rounding of the inputs.
        let base = u.min();
        let rel = u.map(|x| x - base);
        let vals = rel.values();
        let shift = self.alpha * self.weight + self.decay * base;
        let out: Vec<f64> = (0..u.len())
            .into_par_iter()
            .map(|k| {
                let m = if self.d == 1 { self.min_1d(vals, k) } else { self.min_2d(&rel, k) };
                m + shift
            })
            .collect();
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: format!("Lax-Oleinik step at node {k}"),
            });
        }
        GridFunction::new(self.n, self.d, out)
    }

    /// `steps` consecutive applications.
    pub fn iterate(&self, u: &GridFunction, steps: usize) -> Result<GridFunction> {
        let mut cur = u.clone();
        for _ in 0..steps {
            cur = self.step(&cur)?;
        }
        Ok(cur)
    }

    /// Actions of node `k` for every slot, from the table or computed.
    fn row<'b>(&'b self, k: usize, buf: &'b mut Vec<f64>) -> &'b [f64] {
        let per = self.per_node();
        match &self.table {
            Some(t) => &t[k * per..(k + 1) * per],
            None => {
                let q = self.node(k);
                let mut scratch = [0.0; 2];
                buf.clear();
                buf.extend((0..per).map(|slot| {
                    let disp = self.slot_displacement(slot);
                    self.action_at(&q[..self.d], &disp[..self.d], &mut scratch)
                }));
                buf
            }
        }
    }

    fn min_1d(&self, vals: &[f64], k: usize) -> f64 {
        let n = self.n;
        let r = self.reach;
        let mut buf = Vec::new();
        let row = self.row(k, &mut buf);
        // src[i] = u at offset j = i - r, i.e. at node k - j.
        let mut src = Vec::with_capacity(2 * r + 1);
        let mut idx = (k + r) % n;
        for _ in 0..=2 * r {
            src.push(vals[idx]);
            idx = if idx == 0 { n - 1 } else { idx - 1 };
        }
        let mut best = f64::INFINITY;
        for i in 0..=2 * r {
            best = best.min(self.decay * src[i] + row[2 * i]);
        }
        let q = self.node(k);
        let mut scratch = [0.0; 2];
        for i in 0..2 * r {
            let (ua, ub) = (src[i], src[i + 1]);
            let fa = self.decay * ua + row[2 * i];
            let fb = self.decay * ub + row[2 * i + 2];
            let fm = self.decay * 0.5 * (ua + ub) + row[2 * i + 1];
            // Valid for objectives convex on the cell.
            let lower = fa.min(fb).min(fm).min(2.0 * fm - fa).min(2.0 * fm - fb);
            if lower >= best {
                continue;
            }
            let j = i as f64 - r as f64;
            let mut g = |s: f64| {
                let disp = [s * self.h];
                let uu = ua + (s - j) * (ub - ua);
                self.decay * uu + self.action_at(&q[..1], &disp, &mut scratch)
            };
            // A convex objective that rises just inside an end is minimized there.
            let (a, b) = (j + LINE_TOL, j + 1.0 - LINE_TOL);
            let (ga, gb) = (g(a), g(b));
            if ga >= fa || gb >= fb {
                best = best.min(ga).min(gb);
                continue;
            }
            best = best.min(line_min(&mut g, a, b, ga, gb, LINE_TOL).0);
        }
        best
    }

    fn min_2d(&self, u: &GridFunction, k: usize) -> f64 {
        let n = self.n as i64;
        let vals = u.values();
        let (k0, k1) = ((k % self.n) as i64, (k / self.n) as i64);
        let mut buf = Vec::new();
        let row = self.row(k, &mut buf);
        let wrap = |x: i64| if x < 0 { x + n } else if x >= n { x - n } else { x };
        let mut best = f64::INFINITY;
        let mut arg = [0i64; 2];
        for (a, off) in row.iter().zip(&self.offsets) {
            let idx = wrap(k0 - off[0]) + wrap(k1 - off[1]) * n;
            let v = self.decay * vals[idx as usize] + a;
            if v < best {
                best = v;
                arg = *off;
            }
        }
        let mut scratch = [0.0; 2];
        let q = self.node(k);
        let limit = self.kernel.reach() / self.h;
        let half = self.n as f64 / 2.0;
        let mut pos = [arg[0] as f64, arg[1] as f64];
        for _ in 0..POLISH_SWEEPS {
            for axis in 0..2 {
                let other = pos[1 - axis];
                let span = (limit * limit - other * other).max(0.0).sqrt().min(half);
                let lo = (pos[axis] - 1.0).max(-span);
                let hi = (pos[axis] + 1.0).min(span);
                if hi - lo <= LINE_TOL {
                    continue;
                }
                let mut g = |s: f64| {
                    let mut off = pos;
                    off[axis] = s;
                    let disp = [off[0] * self.h, off[1] * self.h];
                    let from = [q[0] - disp[0], q[1] - disp[1]];
                    self.decay * u.eval(&from) + self.action_at(&q, &disp, &mut scratch)
                };
                let (flo, fhi) = (g(lo), g(hi));
                let (value, at) = line_min(&mut g, lo, hi, flo, fhi, LINE_TOL);
                if value < best {
                    best = value;
                    pos[axis] = at;
                }
            }
        }
        best
    }
}

/// Minimum of `f` over `[a, b]` (Brent: golden sections with parabolic
/// steps), including the endpoint values `fa`, `fb`. Returns the value and
/// its location.
pub(crate) fn line_min<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64) -> (f64, f64) {
    const CG: f64 = 0.381_966_011_250_105_1;
    let (a0, b0) = (a, b);
    let (mut a, mut b) = (a, b);
    let mut x = a + CG * (b - a);
    let mut fx = f(x);
    let (mut w, mut v, mut fw, mut fv) = (x, x, fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol2 = 2.0 * xtol;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > xtol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = xtol.copysign(m - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = CG * e;
        }
        let u = if d.abs() >= xtol { x + d } else { x + xtol.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    let mut best = (fx, x);
    if fa < best.0 {
        best = (fa, a0);
    }
    if fb < best.0 {
        best = (fb, b0);
    }
    best
}
