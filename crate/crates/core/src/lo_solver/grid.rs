use serde::{Deserialize, Serialize};

use crate::dynamics::wrap;
use crate::error::{Error, Result};

/// Largest number of grid points accepted from user input or files.
pub const MAX_POINTS: usize = 1 << 24;

/// Periodic scalar field on the uniform grid `{k/n}^d` of the torus.
///
/// Values are stored with axis 0 varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

/// Metadata stored alongside serialized grid functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub c: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
}

pub(crate) fn point_count(n: usize, d: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::input(format!("grid size n = {n} must be at least 2")));
    }
    if !(1..=2).contains(&d) {
        return Err(Error::input(format!("grid dimension {d} unsupported (1 or 2)")));
    }
    match n.checked_pow(d as u32) {
        Some(len) if len <= MAX_POINTS => Ok(len),
        _ => Err(Error::input(format!("grid {n}^{d} exceeds {MAX_POINTS} points"))),
    }
}

impl GridFunction {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        let len = point_count(n, d)?;
        if values.len() != len {
            return Err(Error::input(format!(
                "grid expects {len} values, got {}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("grid value {k} is not finite")));
        }
        Ok(Self { n, d, values })
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        Self::constant(n, d, 0.0)
    }

    pub fn constant(n: usize, d: usize, value: f64) -> Result<Self> {
        let len = point_count(n, d)?;
        Self::new(n, d, vec![value; len])
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(n: usize, d: usize, f: F) -> Result<Self> {
        let len = point_count(n, d)?;
        let mut q = vec![0.0; d];
        let values = (0..len)
            .map(|k| {
                Self::fill_point(n, d, k, &mut q);
                f(&q)
            })
            .collect();
        Self::new(n, d, values)
    }

    fn fill_point(n: usize, d: usize, mut k: usize, q: &mut [f64]) {
        for qi in q.iter_mut().take(d) {
            *qi = (k % n) as f64 / n as f64;
            k /= n;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing `1/n`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.d];
        Self::fill_point(self.n, self.d, k, &mut q);
        q
    }

    /// Flat index of the node displaced by `offset` cells along `axis`.
    pub fn shift(&self, k: usize, axis: usize, offset: isize) -> usize {
        let stride = self.n.pow(axis as u32);
        let coord = (k / stride) % self.n;
        let moved = (coord as isize + offset).rem_euclid(self.n as isize) as usize;
        k + moved * stride - coord * stride
    }

    /// Periodic multilinear interpolation.
    pub fn eval(&self, q: &[f64]) -> f64 {
        let n = self.n;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for i in 0..self.d {
            let x = wrap(q[i]) * n as f64;
            let fl = x.floor();
            base[i] = (fl as usize) % n;
            frac[i] = x - fl;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.d) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for i in 0..self.d {
                let bit = (corner >> i) & 1;
                w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
                idx += ((base[i] + bit) % n) * stride;
                stride *= n;
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.n == other.n && self.d == other.d
    }

    fn check_same(&self, other: &GridFunction) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::input(format!(
                "grid mismatch: {}^{} vs {}^{}",
                self.n, self.d, other.n, other.d
            )))
        }
    }

    /// `max |self − other|` over grid nodes.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Sup distance after removing the best additive constant.
    pub fn sup_distance_mod_constants(&self, other: &GridFunction) -> Result<f64> {
        self.check_same(other)?;
        let (lo, hi) = self
            .values
            .iter()
            .zip(&other.values)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a - b), hi.max(a - b))
            });
        Ok(0.5 * (hi - lo))
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> GridFunction {
        GridFunction {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_constant(&self, a: f64) -> GridFunction {
        self.map(|v| v + a)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same(other)?;
        Ok(GridFunction {
            n: self.n,
            d: self.d,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn normalized(&self) -> GridFunction {
        self.add_constant(-self.mean())
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            n: self.n,
            d: self.d,
            c: vec![0.0; self.d],
            lambda: 0.0,
            alpha: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(GridFunction::new(4, 1, vec![0.0; 3]).is_err());
        assert!(GridFunction::new(4, 1, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(GridFunction::zeros(1, 1).is_err());
        assert!(GridFunction::zeros(4, 3).is_err());
        assert!(GridFunction::zeros(1 << 13, 2).is_err());
        assert_eq!(GridFunction::zeros(8, 2).unwrap().len(), 64);
    }

    #[test]
    fn interpolation_is_periodic_and_exact_at_nodes() {
        let g = GridFunction::from_fn(16, 2, |q| (2.0 * std::f64::consts::PI * q[0]).sin() + q[1]).unwrap();
        for k in [0, 5, 17, 255] {
            let q = g.point(k);
            assert!((g.eval(&q) - g.values()[k]).abs() < 1e-14);
            let shifted: Vec<f64> = q.iter().map(|x| x + 3.0).collect();
            assert!((g.eval(&shifted) - g.values()[k]).abs() < 1e-12);
        }
        let line = GridFunction::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((line.eval(&[0.125]) - 0.5).abs() < 1e-15);
        assert!((line.eval(&[0.875]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn shift_wraps() {
        let g = GridFunction::zeros(4, 2).unwrap();
        assert_eq!(g.shift(0, 0, -1), 3);
        assert_eq!(g.shift(0, 1, -1), 12);
        assert_eq!(g.shift(15, 0, 1), 12);
        assert_eq!(g.shift(15, 1, 1), 3);
        assert_eq!(g.shift(5, 1, 2), 13);
    }

    #[test]
    fn distances() {
        let a = GridFunction::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = a.add_constant(5.0);
        assert_eq!(a.sup_distance(&b).unwrap(), 5.0);
        assert_eq!(a.sup_distance_mod_constants(&b).unwrap(), 0.0);
        assert!(a.sup_distance(&GridFunction::zeros(8, 1).unwrap()).is_err());
        assert_eq!(a.normalized().mean(), 0.0);
    }
}
