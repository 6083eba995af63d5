//! Closed forms for the pendulum `H(q, p) = ½p² + cos(2πq)` in the rotation zone.
//!
//! For energy `e ≥ 1` the upper invariant circle is the graph of
//! `p = √(2(e − cos 2πq))` and its cohomology is `c(e) = ∫₀¹ p dq`. The weak KAM
//! solution for cohomology `I = c(e)` is `u_I(q) = ∫₀^q (p(s) − I) ds`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cohomology of the separatrix, `c(1) = 4/π`.
pub const I_PLUS: f64 = 4.0 / PI;

const QUAD_TOL: f64 = 1e-12;
const MAX_DEPTH: u32 = 48;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let s = f(mid - x) + f(mid + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * half, ((k - g) * half).abs())
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, err) = kronrod(f, a, b);
    if err <= tol || depth == 0 || (b - a).abs() < 1e-15 {
        return k;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth - 1) + adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod 7-15 quadrature with an absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    adaptive(&f, a, b, tol, MAX_DEPTH)
}

/// `e − cos 2πq`, written to avoid cancellation near the separatrix.
fn energy_gap(e: f64, q: f64) -> f64 {
    let s = (PI * q).sin();
    (e - 1.0) + 2.0 * s * s
}

fn momentum(e: f64, q: f64) -> f64 {
    (2.0 * energy_gap(e, q)).sqrt()
}

/// Cohomology of the upper invariant circle at energy `e`.
pub fn c_of_e(e: f64) -> Result<f64> {
    if !(e >= 1.0) || !e.is_finite() {
        return Err(Error::Domain(format!("energy {e} is below the separatrix level 1")));
    }
    // The integrand is symmetric about q = ½.
    Ok(2.0 * integrate(|q| momentum(e, q), 0.0, 0.5, 0.5 * QUAD_TOL))
}

/// Inverse of [`c_of_e`]; also the Mañé critical value at cohomology `I`.
pub fn e_of_i(i: f64) -> Result<f64> {
    if !i.is_finite() || i < I_PLUS - 1e-12 {
        return Err(Error::Domain(format!("cohomology {i} is below I+ = 4/π")));
    }
    if i <= I_PLUS {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while c_of_e(hi)? < i {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if c_of_e(mid)? < i {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A rotational invariant circle, identified by its energy and cohomology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumCurve {
    pub e: f64,
    pub i: f64,
}

impl PendulumCurve {
    pub fn from_cohomology(i: f64) -> Result<Self> {
        let e = e_of_i(i)?;
        Ok(Self { e, i: i.max(I_PLUS) })
    }

    pub fn from_energy(e: f64) -> Result<Self> {
        Ok(Self { e, i: c_of_e(e)? })
    }

    pub fn separatrix() -> Self {
        Self { e: 1.0, i: I_PLUS }
    }

    fn is_separatrix(&self) -> bool {
        self.e <= 1.0
    }

    /// `p(q) = I + u'(q)` on the invariant circle.
    pub fn momentum(&self, q: f64) -> f64 {
        momentum(self.e, q)
    }

    pub fn u(&self, q: f64) -> f64 {
        let q = check_unit(q);
        integrate(|s| self.du(s), 0.0, q, QUAD_TOL)
    }

    pub fn du(&self, q: f64) -> f64 {
        momentum(self.e, q) - self.i
    }

    /// Second derivative of `u`. On the separatrix it equals `2π cos πq` on
    /// `(0, 1)` and is undefined at `q = 0`.
    pub fn d2u(&self, q: f64) -> Result<f64> {
        let q = check_unit(q);
        if self.is_separatrix() {
            if q == 0.0 {
                return Err(Error::Singular(
                    "separatrix u'' jumps from -2π to 2π at q = 0".into(),
                ));
            }
            return Ok(2.0 * PI * (PI * q).cos());
        }
        Ok(2.0 * PI * (2.0 * PI * q).sin() / momentum(self.e, q))
    }

    /// Unsimplified quotient `2π sin 2πq / √(2(e − cos 2πq))`.
    pub fn d2u_raw(&self, q: f64) -> f64 {
        let denom = (2.0 * (self.e - (2.0 * PI * q).cos())).sqrt();
        2.0 * PI * (2.0 * PI * q).sin() / denom
    }

    /// Values of `u` at `k/n`, `k = 0..n`, accumulated cell by cell.
    pub fn sample_u(&self, n: usize) -> Vec<f64> {
        let h = 1.0 / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 0..n {
            out.push(acc);
            let a = k as f64 * h;
            acc += integrate(|s| self.du(s), a, a + h, QUAD_TOL * h);
        }
        out
    }

    pub fn sample_du(&self, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.du(k as f64 / n as f64)).collect()
    }

    /// Mean of `u` against the invariant measure of the circle, whose density
    /// is proportional to `1/p`.
    pub fn invariant_mean(&self) -> f64 {
        let cells = 512;
        let h = 1.0 / cells as f64;
        let mut base = 0.0;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..cells {
            let a = k as f64 * h;
            let b = a + h;
            let b0 = base;
            num += integrate(
                |q| (b0 + integrate(|s| self.du(s), a, q, QUAD_TOL * h)) / self.momentum(q),
                a,
                b,
                QUAD_TOL * h,
            );
            den += integrate(|q| 1.0 / self.momentum(q), a, b, QUAD_TOL * h);
            base += integrate(|s| self.du(s), a, b, QUAD_TOL * h);
        }
        num / den
    }
}

fn check_unit(q: f64) -> f64 {
    let r = q.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

pub fn oracle_u(i: f64, q: f64) -> Result<f64> {
    Ok(PendulumCurve::from_cohomology(i)?.u(q))
}

pub fn oracle_du(i: f64, q: f64) -> Result<f64> {
    Ok(PendulumCurve::from_cohomology(i)?.du(q))
}

pub fn oracle_d2u(i: f64, q: f64) -> Result<f64> {
    PendulumCurve::from_cohomology(i)?.d2u(q)
}

/// Witness of the sup-norm gap between second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupGap {
    pub value: f64,
    pub q: f64,
}

fn gap_grid() -> Vec<f64> {
    let mut qs: Vec<f64> = (1..10_000).map(|k| k as f64 / 10_000.0).collect();
    for j in 0..=220 {
        let q = 10f64.powf(-12.0 + j as f64 * 11.0 / 220.0);
        qs.push(q);
        qs.push(1.0 - q);
    }
    qs.retain(|&q| q > 0.0 && q < 1.0);
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    qs
}

/// `max_q |u_I'' − u_{I₊}''|` over a dense grid refined geometrically near `q = 0`.
pub fn oracle_sup_d2_gap(i: f64) -> Result<SupGap> {
    if !(i > I_PLUS) {
        return Err(Error::Domain(format!("cohomology {i} must exceed I+")));
    }
    let curve = PendulumCurve::from_cohomology(i)?;
    let sep = PendulumCurve::separatrix();
    let mut best = SupGap { value: 0.0, q: 0.0 };
    for q in gap_grid() {
        let g = (curve.d2u(q)? - sep.d2u(q)?).abs();
        if g > best.value {
            best = SupGap { value: g, q };
        }
    }
    Ok(best)
}

/// `∫₀¹ |u_I'' − u_{I₊}''| dq` by adaptive quadrature.
pub fn oracle_d21_gap(i: f64) -> Result<f64> {
    if !(i >= I_PLUS) {
        return Err(Error::Domain(format!("cohomology {i} is below I+")));
    }
    let curve = PendulumCurve::from_cohomology(i)?;
    let sep = PendulumCurve::separatrix();
    let f = |q: f64| {
        if q <= 0.0 {
            return 2.0 * PI;
        }
        (curve.d2u(q).unwrap_or(0.0) - sep.d2u(q).unwrap_or(2.0 * PI)).abs()
    };
    // Symmetric about ½; breakpoints resolve the boundary layer at q = 0.
    let mut total = 0.0;
    let mut a = 0.0;
    for j in -12..=0 {
        let b = 0.5 * 10f64.powi(j).min(1.0);
        total += integrate(f, a, b, 1e-13);
        a = b;
    }
    Ok(2.0 * total)
}

/// `d_{2,1}` between `u_I` and `u_{I₊}` integrated against grid cells, for
/// comparison with grid-based estimates.
pub fn oracle_d21_gap_over(i: f64, lo: f64, hi: f64) -> Result<f64> {
    let curve = PendulumCurve::from_cohomology(i)?;
    let sep = PendulumCurve::separatrix();
    let f = |q: f64| {
        let q = q.rem_euclid(1.0);
        if q == 0.0 {
            return 2.0 * PI;
        }
        (curve.d2u(q).unwrap_or(0.0) - sep.d2u(q).unwrap_or(0.0)).abs()
    };
    Ok(integrate(f, lo, hi, 1e-13))
}
