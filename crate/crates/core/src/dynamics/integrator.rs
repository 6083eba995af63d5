//! Dormand-Prince 5(4) with error-per-unit-step control.

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Observer verdict after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dopri5 {
    pub tol: f64,
    pub dt_max: f64,
}

impl Dopri5 {
    /// Integrates the autonomous system `y' = f(y)` for the signed `duration`.
    ///
    /// `observe(t, y)` runs after every accepted step with the elapsed signed
    /// time; it may rewrite `y` (torus reduction, frame renormalization).
    /// Returns the elapsed time at which integration ended.
    pub fn integrate<F, O>(&self, y: &mut [f64], duration: f64, mut f: F, mut observe: O) -> Result<f64>
    where
        F: FnMut(&[f64], &mut [f64]),
        O: FnMut(f64, &mut [f64]) -> Control,
    {
        if !duration.is_finite() {
            return Err(Error::input("integration duration must be finite"));
        }
        if duration == 0.0 {
            return Ok(0.0);
        }
        let n = y.len();
        let dir = duration.signum();
        let total = duration.abs();
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut elapsed = 0.0_f64;
        let mut h = self.dt_max.min(total).min(1e-2);
        // Whether k[0] already holds f(y).
        let mut fresh = false;

        while elapsed < total {
            let last = elapsed + h >= total;
            if last {
                h = total - elapsed;
            }
            let hs = dir * h;
            if !fresh {
                f(y, &mut k[0]);
                fresh = true;
            }
            stage(y, hs, &[(A21, &k[0])], &mut tmp);
            f(&tmp, &mut k[1]);
            stage(y, hs, &[(A31, &k[0]), (A32, &k[1])], &mut tmp);
            f(&tmp, &mut k[2]);
            stage(y, hs, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])], &mut tmp);
            f(&tmp, &mut k[3]);
            stage(
                y,
                hs,
                &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])],
                &mut tmp,
            );
            f(&tmp, &mut k[4]);
            stage(
                y,
                hs,
                &[
                    (A61, &k[0]),
                    (A62, &k[1]),
                    (A63, &k[2]),
                    (A64, &k[3]),
                    (A65, &k[4]),
                ],
                &mut tmp,
            );
            f(&tmp, &mut k[5]);
            stage(
                y,
                hs,
                &[(B1, &k[0]), (B3, &k[2]), (B4, &k[3]), (B5, &k[4]), (B6, &k[5])],
                &mut y_new,
            );
            f(&y_new, &mut k[6]);

            let mut err = 0.0_f64;
            for i in 0..n {
                let e = hs
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                        + E7 * k[6][i]);
                let scale = 1.0 + y[i].abs().max(y_new[i].abs());
                err = err.max(e.abs() / scale);
            }
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                h *= 0.2;
                if h < 1e-14 * (1.0 + elapsed) {
                    return Err(Error::Integration {
                        reached: dir * elapsed,
                    });
                }
                continue;
            }
            let budget = self.tol * h;
            if err <= budget {
                elapsed = if last { total } else { elapsed + h };
                y.copy_from_slice(&y_new);
                if observe(dir * elapsed, y) == Control::Stop {
                    return Ok(dir * elapsed);
                }
                if y == y_new.as_slice() {
                    k.swap(0, 6);
                } else {
                    fresh = false;
                }
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * (budget / err).powf(0.25)).clamp(0.2, 5.0)
                };
                h = (h * factor).min(self.dt_max);
            } else {
                h *= (0.9 * (budget / err).powf(0.25)).clamp(0.1, 0.9);
                if h < 1e-14 * (1.0 + elapsed) {
                    return Err(Error::Integration {
                        reached: dir * elapsed,
                    });
                }
            }
        }
        Ok(dir * elapsed)
    }
}

fn stage(y: &[f64], h: f64, terms: &[(f64, &Vec<f64>)], out: &mut [f64]) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (a, k) in terms {
            acc += a * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}
