//! Tonelli Hamiltonians on `T^d x R^d`.
//!
//! Every model is an evaluator bundle: energy, first and second partials, and
//! the Legendre-dual Lagrangian. Built-in models are mechanical,
//! `H(q, p) = ½ pᵀ A p + V(q)` with a constant positive definite kinetic
//! matrix `A` and a truncated Fourier potential `V`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Second partial derivatives of a Hamiltonian at one phase point.
///
/// `qp[(i, j)] = ∂²H / ∂q_i ∂p_j`; the `(p, q)` block is its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub qq: DMatrix<f64>,
    pub qp: DMatrix<f64>,
    pub pp: DMatrix<f64>,
}

impl HessianBlocks {
    pub fn zeros(d: usize) -> Self {
        Self {
            qq: DMatrix::zeros(d, d),
            qp: DMatrix::zeros(d, d),
            pp: DMatrix::zeros(d, d),
        }
    }
}

pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    /// Free-form label ("pendulum", "free", "mechanical", ...).
    fn kind(&self) -> &str;

    fn energy(&self, q: &[f64], p: &[f64]) -> f64;

    /// Writes `∂H/∂q` into `h_q` and `∂H/∂p` into `h_p`.
    fn gradient(&self, q: &[f64], p: &[f64], h_q: &mut [f64], h_p: &mut [f64]);

    fn hessian(&self, q: &[f64], p: &[f64]) -> HessianBlocks;

    /// [`Hamiltonian::hessian`] written into preallocated `d x d` blocks.
    fn hessian_into(&self, q: &[f64], p: &[f64], out: &mut HessianBlocks) {
        *out = self.hessian(q, p);
    }

    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64;

    /// Writes `∂L/∂v` into `out`.
    fn lagrangian_dv(&self, q: &[f64], v: &[f64], out: &mut [f64]);

    /// `∂L/∂q(q, v) = -∂H/∂q(q, ∂L/∂v(q, v))`.
    fn lagrangian_dq(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut p = vec![0.0; d];
        let mut h_p = vec![0.0; d];
        self.lagrangian_dv(q, v, &mut p);
        self.gradient(q, &p, out, &mut h_p);
        for x in out.iter_mut() {
            *x = -*x;
        }
    }
}

impl<M: Hamiltonian + ?Sized> Hamiltonian for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> &str {
        (**self).kind()
    }
    fn energy(&self, q: &[f64], p: &[f64]) -> f64 {
        (**self).energy(q, p)
    }
    fn gradient(&self, q: &[f64], p: &[f64], h_q: &mut [f64], h_p: &mut [f64]) {
        (**self).gradient(q, p, h_q, h_p)
    }
    fn hessian(&self, q: &[f64], p: &[f64]) -> HessianBlocks {
        (**self).hessian(q, p)
    }
    fn hessian_into(&self, q: &[f64], p: &[f64], out: &mut HessianBlocks) {
        (**self).hessian_into(q, p, out)
    }
    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64 {
        (**self).lagrangian(q, v)
    }
    fn lagrangian_dv(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).lagrangian_dv(q, v, out)
    }
}

impl<M: Hamiltonian + ?Sized> Hamiltonian for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> &str {
        (**self).kind()
    }
    fn energy(&self, q: &[f64], p: &[f64]) -> f64 {
        (**self).energy(q, p)
    }
    fn gradient(&self, q: &[f64], p: &[f64], h_q: &mut [f64], h_p: &mut [f64]) {
        (**self).gradient(q, p, h_q, h_p)
    }
    fn hessian(&self, q: &[f64], p: &[f64]) -> HessianBlocks {
        (**self).hessian(q, p)
    }
    fn hessian_into(&self, q: &[f64], p: &[f64], out: &mut HessianBlocks) {
        (**self).hessian_into(q, p, out)
    }
    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64 {
        (**self).lagrangian(q, v)
    }
    fn lagrangian_dv(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).lagrangian_dv(q, v, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveKind {
    Cos,
    Sin,
}

/// One term `amp * cos(2π k·q)` or `amp * sin(2π k·q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub kind: WaveKind,
    pub amp: f64,
    pub wave: Vec<i32>,
}

impl FourierTerm {
    fn phase(&self, q: &[f64]) -> f64 {
        TWO_PI
            * self
                .wave
                .iter()
                .zip(q)
                .map(|(&k, &x)| k as f64 * x)
                .sum::<f64>()
    }
}

/// Truncated Fourier series on `T^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierPotential {
    pub dim: usize,
    pub terms: Vec<FourierTerm>,
}

impl FourierPotential {
    pub fn new(dim: usize, terms: Vec<FourierTerm>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "dimension must be at least 1"));
        }
        for (i, t) in terms.iter().enumerate() {
            if t.wave.len() != dim {
                return Err(Error::config(
                    format!("terms[{i}].wave"),
                    format!("expected {dim} wave numbers, got {}", t.wave.len()),
                ));
            }
            if !t.amp.is_finite() {
                return Err(Error::config(format!("terms[{i}].amp"), "amplitude must be finite"));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| match t.kind {
                WaveKind::Cos => t.amp * t.phase(q).cos(),
                WaveKind::Sin => t.amp * t.phase(q).sin(),
            })
            .sum()
    }

    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for t in &self.terms {
            let ph = t.phase(q);
            let s = match t.kind {
                WaveKind::Cos => -t.amp * ph.sin(),
                WaveKind::Sin => t.amp * ph.cos(),
            } * TWO_PI;
            for (o, &k) in out.iter_mut().zip(&t.wave) {
                *o += s * k as f64;
            }
        }
    }

    pub fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        self.hessian_into(q, &mut h);
        h
    }

    /// Overwrites `h` with the Hessian at `q`.
    pub fn hessian_into(&self, q: &[f64], h: &mut DMatrix<f64>) {
        h.fill(0.0);
        for t in &self.terms {
            let ph = t.phase(q);
            let s = -t.amp
                * TWO_PI
                * TWO_PI
                * match t.kind {
                    WaveKind::Cos => ph.cos(),
                    WaveKind::Sin => ph.sin(),
                };
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[(i, j)] += s * (t.wave[i] * t.wave[j]) as f64;
                }
            }
        }
    }

    /// Upper bound `Σ |amp|` on `max V`.
    pub fn amplitude_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.amp.abs()).sum()
    }
}

/// `H(q, p) = ½ pᵀ A p + V(q)`.
#[derive(Debug, Clone)]
pub struct Mechanical {
    kind: String,
    kinetic: Option<DMatrix<f64>>,
    kinetic_inv: Option<DMatrix<f64>>,
    potential: FourierPotential,
}

impl Mechanical {
    /// Kinetic part `½|p|²` (`A = 1`).
    pub fn with_potential(kind: impl Into<String>, potential: FourierPotential) -> Self {
        Self {
            kind: kind.into(),
            kinetic: None,
            kinetic_inv: None,
            potential,
        }
    }

    pub fn new(kinetic: DMatrix<f64>, potential: FourierPotential) -> Result<Self> {
        let d = potential.dim;
        if kinetic.nrows() != d || kinetic.ncols() != d {
            return Err(Error::config("kinetic", format!("expected a {d}x{d} matrix")));
        }
        if (&kinetic - kinetic.transpose()).amax() > 1e-12 * (1.0 + kinetic.amax()) {
            return Err(Error::config("kinetic", "matrix must be symmetric"));
        }
        let chol = kinetic
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("kinetic", "matrix must be positive definite"))?;
        Ok(Self {
            kind: "mechanical".into(),
            kinetic_inv: Some(chol.inverse()),
            kinetic: Some(kinetic),
            potential,
        })
    }

    /// `H = ½|p|²` on `T^d`.
    pub fn free(dim: usize) -> Self {
        Self::with_potential("free", FourierPotential::zero(dim))
    }

    /// `H = ½p² + cos(2πq)` on the circle.
    pub fn pendulum() -> Self {
        let potential = FourierPotential {
            dim: 1,
            terms: vec![FourierTerm {
                kind: WaveKind::Cos,
                amp: 1.0,
                wave: vec![1],
            }],
        };
        Self::with_potential("pendulum", potential)
    }

    pub fn potential(&self) -> &FourierPotential {
        &self.potential
    }

    /// The kinetic matrix `A` (identity when unset).
    pub fn kinetic(&self) -> DMatrix<f64> {
        self.kinetic
            .clone()
            .unwrap_or_else(|| DMatrix::identity(self.potential.dim, self.potential.dim))
    }

    fn apply(m: &Option<DMatrix<f64>>, x: &[f64], out: &mut [f64]) {
        match m {
            None => out.copy_from_slice(x),
            Some(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..x.len()).map(|j| m[(i, j)] * x[j]).sum();
                }
            }
        }
    }

    fn quad(m: &Option<DMatrix<f64>>, x: &[f64]) -> f64 {
        match m {
            None => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            Some(m) => {
                let mut s = 0.0;
                for i in 0..x.len() {
                    for j in 0..x.len() {
                        s += x[i] * m[(i, j)] * x[j];
                    }
                }
                0.5 * s
            }
        }
    }
}

impl Hamiltonian for Mechanical {
    fn dim(&self) -> usize {
        self.potential.dim
    }

    fn kind(&self) -> &str {
        &self.kind
    }

    fn energy(&self, q: &[f64], p: &[f64]) -> f64 {
        Self::quad(&self.kinetic, p) + self.potential.value(q)
    }

    fn gradient(&self, q: &[f64], p: &[f64], h_q: &mut [f64], h_p: &mut [f64]) {
        self.potential.gradient(q, h_q);
        Self::apply(&self.kinetic, p, h_p);
    }

    fn hessian(&self, q: &[f64], _p: &[f64]) -> HessianBlocks {
        let d = self.dim();
        HessianBlocks {
            qq: self.potential.hessian(q),
            qp: DMatrix::zeros(d, d),
            pp: self.kinetic(),
        }
    }

    fn hessian_into(&self, q: &[f64], _p: &[f64], out: &mut HessianBlocks) {
        self.potential.hessian_into(q, &mut out.qq);
        out.qp.fill(0.0);
        match &self.kinetic {
            Some(a) => out.pp.copy_from(a),
            None => out.pp.fill_with_identity(),
        }
    }

    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64 {
        Self::quad(&self.kinetic_inv, v) - self.potential.value(q)
    }

    fn lagrangian_dv(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let _ = q;
        Self::apply(&self.kinetic_inv, v, out);
    }

    fn lagrangian_dq(&self, q: &[f64], _v: &[f64], out: &mut [f64]) {
        self.potential.gradient(q, out);
        for x in out.iter_mut() {
            *x = -*x;
        }
    }
}

/// The velocity-reversed system `H̃(q, p) = H(q, -p)`, `L̃(q, v) = L(q, -v)`.
#[derive(Debug, Clone)]
pub struct Reversed<M>(pub M);

impl<M: Hamiltonian> Hamiltonian for Reversed<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn kind(&self) -> &str {
        self.0.kind()
    }

    fn energy(&self, q: &[f64], p: &[f64]) -> f64 {
        let m: Vec<f64> = p.iter().map(|x| -x).collect();
        self.0.energy(q, &m)
    }

    fn gradient(&self, q: &[f64], p: &[f64], h_q: &mut [f64], h_p: &mut [f64]) {
        let m: Vec<f64> = p.iter().map(|x| -x).collect();
        self.0.gradient(q, &m, h_q, h_p);
        for x in h_p.iter_mut() {
            *x = -*x;
        }
    }

    fn hessian(&self, q: &[f64], p: &[f64]) -> HessianBlocks {
        let m: Vec<f64> = p.iter().map(|x| -x).collect();
        let mut h = self.0.hessian(q, &m);
        h.qp = -h.qp;
        h
    }

    fn hessian_into(&self, q: &[f64], p: &[f64], out: &mut HessianBlocks) {
        let m: Vec<f64> = p.iter().map(|x| -x).collect();
        self.0.hessian_into(q, &m, out);
        out.qp.neg_mut();
    }

    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64 {
        let m: Vec<f64> = v.iter().map(|x| -x).collect();
        self.0.lagrangian(q, &m)
    }

    fn lagrangian_dv(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let m: Vec<f64> = v.iter().map(|x| -x).collect();
        self.0.lagrangian_dv(q, &m, out);
        for x in out.iter_mut() {
            *x = -*x;
        }
    }
}

/// Model description as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    /// `"pendulum"`, `"free"`, `"free:<d>"` or `"mechanical:<terms>"`.
    Named(String),
    Custom {
        dim: usize,
        terms: Vec<FourierTerm>,
        #[serde(default)]
        kinetic: Option<Vec<Vec<f64>>>,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Mechanical> {
        match self {
            ModelSpec::Named(s) => parse_model_spec(s),
            ModelSpec::Custom {
                dim,
                terms,
                kinetic,
            } => {
                let potential = FourierPotential::new(*dim, terms.clone())?;
                match kinetic {
                    None => Ok(Mechanical::with_potential("mechanical", potential)),
                    Some(rows) => {
                        if rows.len() != *dim || rows.iter().any(|r| r.len() != *dim) {
                            return Err(Error::config(
                                "model.kinetic",
                                format!("expected a {dim}x{dim} matrix"),
                            ));
                        }
                        let m = DMatrix::from_fn(*dim, *dim, |i, j| rows[i][j]);
                        Mechanical::new(m, potential)
                    }
                }
            }
        }
    }
}

/// Parses a model name.
///
/// Grammar: `pendulum | free[:<d>] | mechanical:<term>(;<term>)*` with
/// `<term> = (cos|sin):<amp>:<k1>[,<k2>...]`.
pub fn parse_model_spec(spec: &str) -> Result<Mechanical> {
    let spec = spec.trim();
    let bad = |msg: String| Error::config("model", msg);
    if spec == "pendulum" {
        return Ok(Mechanical::pendulum());
    }
    if spec == "free" {
        return Ok(Mechanical::free(1));
    }
    if let Some(d) = spec.strip_prefix("free:") {
        let d: usize = d
            .parse()
            .map_err(|_| bad(format!("invalid dimension `{d}`")))?;
        if !(1..=8).contains(&d) {
            return Err(bad(format!("dimension {d} out of range 1..=8")));
        }
        return Ok(Mechanical::free(d));
    }
    let body = spec
        .strip_prefix("mechanical:")
        .ok_or_else(|| bad(format!("unknown model `{spec}`")))?;
    let mut terms = Vec::new();
    let mut dim = None;
    for (i, raw) in body.split(';').enumerate() {
        let mut parts = raw.trim().splitn(3, ':');
        let kind = match parts.next() {
            Some("cos") => WaveKind::Cos,
            Some("sin") => WaveKind::Sin,
            other => return Err(bad(format!("term {i}: unknown wave kind {other:?}"))),
        };
        let amp: f64 = parts
            .next()
            .ok_or_else(|| bad(format!("term {i}: missing amplitude")))?
            .parse()
            .map_err(|_| bad(format!("term {i}: invalid amplitude")))?;
        if !amp.is_finite() {
            return Err(bad(format!("term {i}: amplitude must be finite")));
        }
        let wave = parts
            .next()
            .ok_or_else(|| bad(format!("term {i}: missing wave vector")))?
            .split(',')
            .map(|k| k.trim().parse::<i32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("term {i}: invalid wave vector")))?;
        if wave.is_empty() || wave.len() > 8 || wave.iter().any(|k| k.unsigned_abs() > 1 << 16) {
            return Err(bad(format!("term {i}: wave vector out of range")));
        }
        match dim {
            None => dim = Some(wave.len()),
            Some(d) if d != wave.len() => {
                return Err(bad(format!(
                    "term {i}: wave vector has {} entries, expected {d}",
                    wave.len()
                )))
            }
            _ => {}
        }
        terms.push(FourierTerm { kind, amp, wave });
    }
    let dim = dim.ok_or_else(|| bad("empty potential".into()))?;
    Ok(Mechanical::with_potential(
        "mechanical",
        FourierPotential::new(dim, terms)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_energy_and_lagrangian() {
        let m = Mechanical::pendulum();
        assert_eq!(m.energy(&[0.0], &[0.0]), 1.0);
        assert!((m.energy(&[0.5], &[2.0]) - 1.0).abs() < 1e-15);
        assert!((m.lagrangian(&[0.5], &[2.0]) - 3.0).abs() < 1e-15);
        let mut hq = [0.0];
        let mut hp = [0.0];
        m.gradient(&[0.25], &[1.5], &mut hq, &mut hp);
        assert!((hq[0] + 2.0 * PI).abs() < 1e-12);
        assert_eq!(hp[0], 1.5);
    }

    #[test]
    fn potential_derivatives_match_finite_differences() {
        let pot = FourierPotential::new(
            2,
            vec![
                FourierTerm {
                    kind: WaveKind::Cos,
                    amp: 0.7,
                    wave: vec![1, 2],
                },
                FourierTerm {
                    kind: WaveKind::Sin,
                    amp: -0.3,
                    wave: vec![0, 1],
                },
            ],
        )
        .unwrap();
        let q = [0.31, 0.77];
        let h = 1e-5;
        let mut g = [0.0; 2];
        pot.gradient(&q, &mut g);
        let hess = pot.hessian(&q);
        for i in 0..2 {
            let mut a = q;
            let mut b = q;
            a[i] += h;
            b[i] -= h;
            let fd = (pot.value(&a) - pot.value(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "grad {i}: {fd} vs {}", g[i]);
            let mut ga = [0.0; 2];
            let mut gb = [0.0; 2];
            pot.gradient(&a, &mut ga);
            pot.gradient(&b, &mut gb);
            for j in 0..2 {
                let fd = (ga[j] - gb[j]) / (2.0 * h);
                assert!((fd - hess[(j, i)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn spec_strings() {
        assert_eq!(parse_model_spec("pendulum").unwrap().kind(), "pendulum");
        assert_eq!(parse_model_spec("free:2").unwrap().dim(), 2);
        let m = parse_model_spec("mechanical:cos:1:1").unwrap();
        assert_eq!(m.energy(&[0.0], &[0.0]), 1.0);
        let m = parse_model_spec("mechanical:cos:0.5:1,0;sin:0.1:1,1").unwrap();
        assert_eq!(m.dim(), 2);
        for bad in [
            "",
            "pend",
            "free:0",
            "free:x",
            "mechanical:",
            "mechanical:tan:1:1",
            "mechanical:cos:1",
            "mechanical:cos:nan:1",
            "mechanical:cos:1:1;cos:1:1,1",
        ] {
            let err = parse_model_spec(bad).unwrap_err();
            assert!(matches!(err, Error::Config { ref field, .. } if field == "model"), "{bad}");
        }
    }

    #[test]
    fn custom_spec_with_kinetic_matrix() {
        let spec: ModelSpec = serde_json::from_str(
            r#"{"dim":1,"terms":[{"kind":"cos","amp":1.0,"wave":[1]}],"kinetic":[[2.0]]}"#,
        )
        .unwrap();
        let m = spec.build().unwrap();
        assert!((m.energy(&[0.0], &[1.0]) - 2.0).abs() < 1e-15);
        let mut out = [0.0];
        m.lagrangian_dv(&[0.0], &[1.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-15);
        let bad: ModelSpec =
            serde_json::from_str(r#"{"dim":1,"terms":[],"kinetic":[[-1.0]]}"#).unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn reversed_lagrangian() {
        let m = Mechanical::pendulum();
        let r = Reversed(&m);
        assert_eq!(r.lagrangian(&[0.2], &[0.7]), m.lagrangian(&[0.2], &[-0.7]));
        let mut a = [0.0];
        r.lagrangian_dv(&[0.2], &[0.7], &mut a);
        assert_eq!(a[0], 0.7);
    }
}
