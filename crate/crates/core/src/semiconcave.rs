//! Finite-difference calculus for grid functions that stand in for
//! semi-concave functions, and the distances used to compare them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{nearest_image, wrap};
use crate::error::{Error, Result};
use crate::lo_solver::GridFunction;

/// Ratio between a one-sided difference jump and its neighbours' jumps above
/// which a node is treated as a kink.
pub const KINK_RATIO: f64 = 5.0;
/// Multiplier applied to the median refinement discrepancy.
pub const STABILITY_FACTOR: f64 = 10.0;
/// Relative discrepancy between the `h` and `2h` second differences that
/// disqualifies a node.
pub const STABILITY_RELATIVE: f64 = 0.05;

pub(crate) fn roundoff_floor(u: &GridFunction, power: i32) -> f64 {
    1e3 * f64::EPSILON * u.sup_norm().max(f64::MIN_POSITIVE) * (u.n() as f64).powi(power)
}

/// Gradient proxies with a per-node differentiability flag.
#[derive(Debug, Clone)]
pub struct GradientField {
    n: usize,
    d: usize,
    central: Vec<f64>,
    forward: Vec<f64>,
    backward: Vec<f64>,
    reliable: Vec<bool>,
}

impl GradientField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.reliable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reliable.is_empty()
    }

    pub fn central(&self, k: usize) -> &[f64] {
        &self.central[k * self.d..(k + 1) * self.d]
    }

    pub fn forward(&self, k: usize) -> &[f64] {
        &self.forward[k * self.d..(k + 1) * self.d]
    }

    pub fn backward(&self, k: usize) -> &[f64] {
        &self.backward[k * self.d..(k + 1) * self.d]
    }

    pub fn is_reliable(&self, k: usize) -> bool {
        self.reliable[k]
    }

    pub fn reliable_mask(&self) -> &[bool] {
        &self.reliable
    }

    pub fn reliable_fraction(&self) -> f64 {
        self.reliable.iter().filter(|&&r| r).count() as f64 / self.len() as f64
    }
}

pub fn numeric_gradient(u: &GridFunction) -> GradientField {
    let n = u.n();
    let d = u.dim();
    let len = u.len();
    let inv_h = n as f64;
    let vals = u.values();
    let mut central = vec![0.0; len * d];
    let mut forward = vec![0.0; len * d];
    let mut backward = vec![0.0; len * d];
    let mut jump = vec![0.0; len * d];
    for k in 0..len {
        for a in 0..d {
            let up = vals[u.shift(k, a, 1)];
            let down = vals[u.shift(k, a, -1)];
            let f = (up - vals[k]) * inv_h;
            let b = (vals[k] - down) * inv_h;
            forward[k * d + a] = f;
            backward[k * d + a] = b;
            central[k * d + a] = 0.5 * (up - down) * inv_h;
            jump[k * d + a] = (f - b).abs();
        }
    }
    let floor = roundoff_floor(u, 1);
    let reliable = (0..len)
        .map(|k| {
            (0..d).all(|a| {
                let neighbours = jump[u.shift(k, a, 2) * d + a].max(jump[u.shift(k, a, -2) * d + a]);
                jump[k * d + a] <= KINK_RATIO * neighbours + floor
            })
        })
        .collect();
    GradientField {
        n,
        d,
        central,
        forward,
        backward,
        reliable,
    }
}

/// Per-node symmetric matrices with an Alexandrov-point mask.
#[derive(Debug, Clone)]
pub struct SymField {
    n: usize,
    d: usize,
    data: Vec<f64>,
    alexandrov: Vec<bool>,
    stability_tol: f64,
}

impl SymField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.alexandrov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alexandrov.is_empty()
    }

    /// Entries of the matrix at node `k`, row-major.
    pub fn entries(&self, k: usize) -> &[f64] {
        let m = self.d * self.d;
        &self.data[k * m..(k + 1) * m]
    }

    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, self.entries(k))
    }

    pub fn is_alexandrov(&self, k: usize) -> bool {
        self.alexandrov[k]
    }

    pub fn mask(&self) -> &[bool] {
        &self.alexandrov
    }

    /// Absolute part of the tolerance used to build the mask.
    pub fn stability_tol(&self) -> f64 {
        self.stability_tol
    }
}

/// Second differences at stencil multiple `s`, one symmetric matrix per node.
fn second_differences(u: &GridFunction, s: isize) -> Vec<f64> {
    let d = u.dim();
    let vals = u.values();
    let h = s as f64 / u.n() as f64;
    let inv = 1.0 / (h * h);
    let mut out = vec![0.0; u.len() * d * d];
    for k in 0..u.len() {
        let c = 2.0 * vals[k];
        let m = &mut out[k * d * d..(k + 1) * d * d];
        for a in 0..d {
            m[a * d + a] = (vals[u.shift(k, a, s)] - c + vals[u.shift(k, a, -s)]) * inv;
        }
        if d == 2 {
            let pp = vals[u.shift(u.shift(k, 0, s), 1, s)] + vals[u.shift(u.shift(k, 0, -s), 1, -s)];
            let pm = vals[u.shift(u.shift(k, 0, s), 1, -s)] + vals[u.shift(u.shift(k, 0, -s), 1, s)];
            // Diagonal second differences give u00 ± 2u01 + u11.
            let mixed = 0.25 * (pp - pm) * inv;
            m[1] = mixed;
            m[2] = mixed;
        }
    }
    out
}

pub fn numeric_hessian(u: &GridFunction) -> SymField {
    numeric_hessian_with(u, None)
}

/// Hessian proxy; `stability_tol` overrides the automatic absolute tolerance.
pub fn numeric_hessian_with(u: &GridFunction, stability_tol: Option<f64>) -> SymField {
    let d = u.dim();
    let m = d * d;
    let fine = second_differences(u, 1);
    let coarse = second_differences(u, 2);
    let gap: Vec<f64> = (0..u.len())
        .map(|k| {
            let diff: Vec<f64> = (0..m).map(|i| fine[k * m + i] - coarse[k * m + i]).collect();
            sym_spectral_norm(&diff, d)
        })
        .collect();
    let scale: Vec<f64> = (0..u.len())
        .map(|k| {
            sym_spectral_norm(&fine[k * m..(k + 1) * m], d)
                .max(sym_spectral_norm(&coarse[k * m..(k + 1) * m], d))
        })
        .collect();
    let tol = stability_tol.unwrap_or_else(|| {
        // A field that is rough everywhere has a rough median, so the
        // absolute part may not exceed a small fraction of typical curvature.
        let smooth = STABILITY_FACTOR * median(&gap);
        smooth.min(STABILITY_RELATIVE * median(&scale)) + roundoff_floor(u, 2)
    });
    let alexandrov = (0..u.len())
        .map(|k| gap[k] <= tol + STABILITY_RELATIVE * scale[k])
        .collect();
    SymField {
        n: u.n(),
        d,
        data: fine,
        alexandrov,
        stability_tol: tol,
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[sorted.len() / 2]
}

/// Eigenvalues of a symmetric matrix given row-major, ascending.
pub fn sym_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![m[0]],
        2 => {
            let mean = 0.5 * (m[0] + m[3]);
            let half = 0.5 * (m[0] - m[3]);
            let off = 0.5 * (m[1] + m[2]);
            let r = half.hypot(off);
            vec![mean - r, mean + r]
        }
        _ => {
            let mat = DMatrix::from_row_slice(d, d, m);
            let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

/// Operator norm `sup_{|v|=1} |S(v, v)|` of a symmetric matrix.
pub fn sym_spectral_norm(m: &[f64], d: usize) -> f64 {
    sym_eigenvalues(m, d).iter().fold(0.0, |a, e| a.max(e.abs()))
}

pub fn sym_max_eigenvalue(m: &[f64], d: usize) -> f64 {
    *sym_eigenvalues(m, d).last().expect("d >= 1")
}

pub fn sym_min_eigenvalue(m: &[f64], d: usize) -> f64 {
    sym_eigenvalues(m, d)[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct D21 {
    pub value: f64,
    /// Volume fraction of nodes that are not Alexandrov points of both inputs.
    pub unmeasured_mass: f64,
    /// Set when more than half of the torus is unmeasured.
    pub unreliable: bool,
}

pub fn d21_distance(u: &GridFunction, v: &GridFunction) -> Result<D21> {
    if !u.same_grid(v) {
        return Err(Error::input("d21 needs functions on the same grid"));
    }
    d21_fields(&numeric_hessian(u), &numeric_hessian(v))
}

pub fn d21_fields(a: &SymField, b: &SymField) -> Result<D21> {
    if a.n != b.n || a.d != b.d {
        return Err(Error::input("d21 needs fields on the same grid"));
    }
    let d = a.d;
    let m = d * d;
    let cell = 1.0 / a.len() as f64;
    let norms: Vec<f64> = (0..a.len())
        .into_par_iter()
        .filter(|&k| a.alexandrov[k] && b.alexandrov[k])
        .map(|k| {
            let diff: Vec<f64> = (0..m).map(|i| a.data[k * m + i] - b.data[k * m + i]).collect();
            sym_spectral_norm(&diff, d)
        })
        .collect();
    // Summed in node order so the result does not depend on scheduling.
    let measured = norms.len();
    let sum: f64 = norms.iter().sum();
    let unmeasured_mass = 1.0 - measured as f64 * cell;
    Ok(D21 {
        value: sum * cell,
        unmeasured_mass,
        unreliable: unmeasured_mass > 0.5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureExceed {
    pub measure: f64,
    pub unmeasured_mass: f64,
}

/// Volume of Alexandrov nodes where `D²u − D²v` is not below `eps·1`.
pub fn leb_measure_exceed(u: &GridFunction, v: &GridFunction, eps: f64) -> Result<MeasureExceed> {
    if !u.same_grid(v) {
        return Err(Error::input("measure needs functions on the same grid"));
    }
    leb_measure_exceed_fields(&numeric_hessian(u), &numeric_hessian(v), eps)
}

pub fn leb_measure_exceed_fields(a: &SymField, b: &SymField, eps: f64) -> Result<MeasureExceed> {
    if a.n != b.n || a.d != b.d {
        return Err(Error::input("measure needs fields on the same grid"));
    }
    let d = a.d;
    let m = d * d;
    let cell = 1.0 / a.len() as f64;
    let mut exceed = 0usize;
    let mut measured = 0usize;
    for k in 0..a.len() {
        if !(a.alexandrov[k] && b.alexandrov[k]) {
            continue;
        }
        measured += 1;
        let diff: Vec<f64> = (0..m).map(|i| a.data[k * m + i] - b.data[k * m + i]).collect();
        if sym_max_eigenvalue(&diff, d) >= eps {
            exceed += 1;
        }
    }
    Ok(MeasureExceed {
        measure: exceed as f64 * cell,
        unmeasured_mass: 1.0 - measured as f64 * cell,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiconcavityEstimate {
    pub k: f64,
    /// Grid spacing of the stencils used.
    pub stencil: f64,
}

/// Smallest `K` with every centred second difference along axis and
/// diagonal directions at most `2K`.
pub fn semiconcavity_constant(u: &GridFunction) -> SemiconcavityEstimate {
    let vals = u.values();
    let h = u.spacing();
    let mut worst = 0.0_f64;
    for k in 0..u.len() {
        let c = 2.0 * vals[k];
        for a in 0..u.dim() {
            let s = (vals[u.shift(k, a, 1)] - c + vals[u.shift(k, a, -1)]) / (h * h);
            worst = worst.max(s);
        }
        if u.dim() == 2 {
            let len2 = 2.0 * h * h;
            let pp = vals[u.shift(u.shift(k, 0, 1), 1, 1)] - c + vals[u.shift(u.shift(k, 0, -1), 1, -1)];
            let pm = vals[u.shift(u.shift(k, 0, 1), 1, -1)] - c + vals[u.shift(u.shift(k, 0, -1), 1, 1)];
            worst = worst.max(pp / len2).max(pm / len2);
        }
    }
    SemiconcavityEstimate { k: 0.5 * worst, stencil: h }
}

/// Finite sample of a closed subset of `T^d × R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCloud {
    pub d: usize,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub tag: String,
}

impl GraphCloud {
    pub fn new(d: usize, tag: impl Into<String>) -> Self {
        Self {
            d,
            theta: Vec::new(),
            p: Vec::new(),
            tag: tag.into(),
        }
    }

    pub fn push(&mut self, theta: &[f64], p: &[f64]) {
        self.theta.extend(theta.iter().map(|&x| wrap(x)));
        self.p.extend_from_slice(p);
    }

    pub fn len(&self) -> usize {
        self.theta.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta_at(&self, i: usize) -> &[f64] {
        &self.theta[i * self.d..(i + 1) * self.d]
    }

    pub fn p_at(&self, i: usize) -> &[f64] {
        &self.p[i * self.d..(i + 1) * self.d]
    }

    /// Cloud of the graph of `p = section(θ)` at the given base points.
    pub fn from_section<F: Fn(&[f64]) -> Vec<f64>>(d: usize, thetas: &[Vec<f64>], section: F, tag: &str) -> Self {
        let mut cloud = Self::new(d, tag);
        for t in thetas {
            cloud.push(t, &section(t));
        }
        cloud
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<String> = (1..=self.d)
            .map(|i| format!("theta_{i}"))
            .chain((1..=self.d).map(|i| format!("p_{i}")))
            .chain(std::iter::once("source_tag".to_string()))
            .collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for i in 0..self.len() {
            for x in self.theta_at(i).iter().chain(self.p_at(i)) {
                out.push_str(&format!("{x:.16e},"));
            }
            out.push_str(&self.tag);
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::parse(1, "empty cloud file"))?;
        let cols: Vec<&str> = head.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols.len() % 2 == 0 || cols.last() != Some(&"source_tag") {
            return Err(Error::parse(1, "expected columns theta_1..d, p_1..d, source_tag"));
        }
        let d = (cols.len() - 1) / 2;
        for i in 0..d {
            if cols[i] != format!("theta_{}", i + 1) || cols[d + i] != format!("p_{}", i + 1) {
                return Err(Error::parse(1, format!("unexpected column names {cols:?}")));
            }
        }
        let mut cloud: Option<GraphCloud> = None;
        for (k, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * d + 1 {
                return Err(Error::parse(k + 1, format!("expected {} fields", 2 * d + 1)));
            }
            let mut nums = Vec::with_capacity(2 * d);
            for f in &fields[..2 * d] {
                let x: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(k + 1, format!("not a number: {f:?}")))?;
                if !x.is_finite() {
                    return Err(Error::parse(k + 1, "non-finite coordinate"));
                }
                nums.push(x);
            }
            let tag = fields[2 * d].trim();
            let c = cloud.get_or_insert_with(|| GraphCloud::new(d, tag));
            if c.tag != tag {
                return Err(Error::parse(k + 1, "mixed source tags in one cloud"));
            }
            c.push(&nums[..d], &nums[d..]);
        }
        cloud.ok_or_else(|| Error::parse(2, "cloud has no points"))
    }
}

/// Cloud of `(θ, c + du(θ))`; kinks contribute both one-sided slopes.
pub fn graph_cloud(u: &GridFunction, c: &[f64]) -> Result<GraphCloud> {
    graph_cloud_from(&numeric_gradient(u), u, c, "grid")
}

pub fn graph_cloud_from(grad: &GradientField, u: &GridFunction, c: &[f64], tag: &str) -> Result<GraphCloud> {
    let d = u.dim();
    if c.len() != d {
        return Err(Error::input(format!("form has {} entries for dimension {d}", c.len())));
    }
    let mut cloud = GraphCloud::new(d, tag);
    let shifted = |g: &[f64]| -> Vec<f64> { g.iter().zip(c).map(|(a, b)| a + b).collect() };
    for k in 0..u.len() {
        let q = u.point(k);
        if grad.is_reliable(k) {
            cloud.push(&q, &shifted(grad.central(k)));
        } else {
            cloud.push(&q, &shifted(grad.forward(k)));
            cloud.push(&q, &shifted(grad.backward(k)));
        }
    }
    Ok(cloud)
}

fn point_distance(a: &GraphCloud, i: usize, b: &GraphCloud, j: usize) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.theta_at(i).iter().zip(b.theta_at(j)) {
        let t = nearest_image(x - y);
        s += t * t;
    }
    for (x, y) in a.p_at(i).iter().zip(b.p_at(j)) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}

/// One-sided distance `sup_{a ∈ A} inf_{b ∈ B} d(a, b)`.
pub fn directed_hausdorff(a: &GraphCloud, b: &GraphCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("Hausdorff distance of an empty cloud"));
    }
    if a.d != b.d {
        return Err(Error::input("clouds live in different dimensions"));
    }
    Ok((0..a.len())
        .into_par_iter()
        .map(|i| (0..b.len()).fold(f64::INFINITY, |m, j| m.min(point_distance(a, i, b, j))))
        .reduce(|| 0.0, f64::max))
}

pub fn hausdorff_distance(a: &GraphCloud, b: &GraphCloud) -> Result<f64> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

/// Continuous section `θ ↦ η(θ) ∈ R^d` sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl Section {
    pub fn from_fn<F: Fn(&[f64]) -> Vec<f64>>(n: usize, d: usize, f: F) -> Result<Self> {
        let grid = GridFunction::zeros(n, d)?;
        let mut values = Vec::with_capacity(grid.len() * d);
        for k in 0..grid.len() {
            let v = f(&grid.point(k));
            if v.len() != d {
                return Err(Error::input("section value has wrong dimension"));
            }
            values.extend(v);
        }
        Ok(Self { n, d, values })
    }

    /// Section `c + du` from reliable central differences.
    pub fn from_gradient(grad: &GradientField, c: &[f64]) -> Self {
        let d = grad.dim();
        let values = (0..grad.len())
            .flat_map(|k| grad.central(k).iter().zip(c).map(|(g, ci)| g + ci).collect::<Vec<_>>())
            .collect();
        Self { n: grad.n(), d, values }
    }

    fn node_of(&self, theta: &[f64]) -> usize {
        let mut k = 0;
        let mut stride = 1;
        for &t in theta {
            let i = ((wrap(t) * self.n as f64).round() as usize) % self.n;
            k += i * stride;
            stride *= self.n;
        }
        k
    }

    pub fn at(&self, theta: &[f64]) -> &[f64] {
        let k = self.node_of(theta);
        &self.values[k * self.d..(k + 1) * self.d]
    }

    /// Cloud of the multilinear interpolant of the section, sampled on the
    /// grid refined `refine` times per axis. Approximates the closure of a
    /// continuous graph much better than the node samples alone.
    pub fn refined_graph(&self, refine: usize, tag: &str) -> Result<GraphCloud> {
        if refine == 0 {
            return Err(Error::input("refinement factor must be positive"));
        }
        let fine = GridFunction::zeros(self.n * refine, self.d)?;
        let mut cloud = GraphCloud::new(self.d, tag);
        let mut p = vec![0.0; self.d];
        for k in 0..fine.len() {
            let theta = fine.point(k);
            self.interpolate(&theta, &mut p);
            cloud.push(&theta, &p);
        }
        Ok(cloud)
    }

    fn interpolate(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for (a, &t) in theta.iter().enumerate() {
            let x = wrap(t) * n as f64;
            let i = (x.floor() as usize).min(n - 1);
            base[a] = i;
            frac[a] = x - i as f64;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << self.d) {
            let mut w = 1.0;
            let mut k = 0;
            let mut stride = 1;
            for a in 0..self.d {
                let up = (corner >> a) & 1;
                w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                k += ((base[a] + up) % n) * stride;
                stride *= n;
            }
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.values[k * self.d..(k + 1) * self.d]) {
                *o += w * v;
            }
        }
    }

    /// Cloud of the section's graph at the grid nodes.
    pub fn graph(&self, tag: &str) -> Result<GraphCloud> {
        let grid = GridFunction::zeros(self.n, self.d)?;
        let mut cloud = GraphCloud::new(self.d, tag);
        for k in 0..grid.len() {
            cloud.push(&grid.point(k), &self.values[k * self.d..(k + 1) * self.d]);
        }
        Ok(cloud)
    }
}

/// `max_{(θ,p) ∈ K} |p − η(θ)|`, with `θ` snapped to its nearest grid node.
pub fn fiberwise_sup_distance(cloud: &GraphCloud, eta: &Section) -> Result<f64> {
    if cloud.d != eta.d {
        return Err(Error::input("cloud and section dimensions differ"));
    }
    Ok((0..cloud.len()).fold(0.0, |m, i| {
        let e = eta.at(cloud.theta_at(i));
        let dist = cloud
            .p_at(i)
            .iter()
            .zip(e)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        m.max(dist)
    }))
}
