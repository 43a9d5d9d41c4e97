//! Reconstruction, gradient and projection operators on an admissible mesh.
//!
//! A cell vector `(u_K)` is identified with the piecewise constant function `π u`. The
//! discrete gradient lives on diamond cells `D_KL` (the convex hull of `σ_KL`, `x_K` and
//! `x_L`), where it equals `d (u_L − u_K)/|x_K − x_L|` times the unit normal from `K` to
//! `L`. Its squared `L²` norm is `d Σ_σ τ_σ (u_K − u_L)²`.

use std::io::Write;

use thiserror::Error;

use crate::mesh::{AdmissibleMesh, CellShape, Point};
use crate::monotone_graph::MonotoneGraph;
use crate::quadrature;
use crate::time_algebra::TimeGrid;

#[derive(Debug, Error)]
pub enum DiscreteError {
    #[error("vector has {got} entries, mesh has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("point ({}, {}) lies outside the domain", .0[0], .0[1])]
    OutOfDomain(Point),
    #[error("ratio undefined for the zero vector")]
    ZeroVector,
    #[error("weights must be positive and finite (index {0})")]
    InvalidWeight(usize),
    #[error("exponent must lie in [1, ∞), got {0}")]
    InvalidExponent(f64),
    #[error("field has {got} time slots, grid has {expected}")]
    SlotMismatch { expected: usize, got: usize },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVector(Vec<f64>);

impl CellVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DiscreteError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiscreteError::NonFinite(i));
        }
        Ok(Self(values))
    }

    /// Checks the length against `mesh` as well.
    pub fn on_mesh(mesh: &AdmissibleMesh, values: Vec<f64>) -> Result<Self, DiscreteError> {
        check_len(mesh, values.len())?;
        Self::new(values)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    /// Writes `cell_id,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DiscreteError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_id", "value"])?;
        for (k, v) in self.0.iter().enumerate() {
            w.write_record([k.to_string(), fmt_real(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_len(mesh: &AdmissibleMesh, got: usize) -> Result<(), DiscreteError> {
    if got != mesh.num_cells() {
        return Err(DiscreteError::LengthMismatch {
            expected: mesh.num_cells(),
            got,
        });
    }
    Ok(())
}

/// Positive cell weights `ω_K` with their bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    values: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl WeightField {
    pub fn new(values: Vec<f64>) -> Result<Self, DiscreteError> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DiscreteError::InvalidWeight(i));
        }
        let lower = values.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = values.iter().copied().fold(0.0, f64::max);
        Ok(Self { values, lower, upper })
    }

    pub fn ones(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            lower: 1.0,
            upper: 1.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }
}

/// Gradient values, one vector per interior interface.
#[derive(Debug, Clone, PartialEq)]
pub struct DiamondField {
    dim: usize,
    values: Vec<Point>,
}

impl DiamondField {
    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn magnitude(&self, s: usize) -> f64 {
        let v = self.values[s];
        (v[0] * v[0] + v[1] * v[1]).sqrt()
    }

    /// `∫ |G|²` using the diamond measures.
    pub fn l2_norm_squared(&self, mesh: &AdmissibleMesh) -> f64 {
        (0..self.values.len())
            .map(|s| mesh.diamond_measure(s) * self.magnitude(s).powi(2))
            .sum()
    }

    pub fn lp_norm(&self, mesh: &AdmissibleMesh, p: f64) -> f64 {
        (0..self.values.len())
            .map(|s| mesh.diamond_measure(s) * self.magnitude(s).powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    pub fn linf_norm(&self) -> f64 {
        (0..self.values.len()).map(|s| self.magnitude(s)).fold(0.0, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Values `u_K^k` for `k = 0..=n`, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    num_cells: usize,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(num_slots: usize, num_cells: usize) -> Self {
        Self {
            num_cells,
            values: vec![0.0; num_slots * num_cells],
        }
    }

    pub fn from_slots(slots: Vec<Vec<f64>>) -> Result<Self, DiscreteError> {
        let num_cells = slots.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(slots.len() * num_cells);
        for s in slots {
            if s.len() != num_cells {
                return Err(DiscreteError::LengthMismatch {
                    expected: num_cells,
                    got: s.len(),
                });
            }
            values.extend(s);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiscreteError::NonFinite(i));
        }
        Ok(Self { num_cells, values })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_slots(&self) -> usize {
        if self.num_cells == 0 {
            0
        } else {
            self.values.len() / self.num_cells
        }
    }

    pub fn slot(&self, k: usize) -> &[f64] {
        &self.values[k * self.num_cells..(k + 1) * self.num_cells]
    }

    pub fn slot_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.num_cells..(k + 1) * self.num_cells]
    }

    pub fn cell_vector(&self, k: usize) -> CellVector {
        CellVector(self.slot(k).to_vec())
    }

    pub fn push_slot(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_cells, "slot length");
        self.values.extend_from_slice(values);
    }

    /// Writes `time_index,cell_id,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DiscreteError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_index", "cell_id", "value"])?;
        for k in 0..self.num_slots() {
            for (c, v) in self.slot(k).iter().enumerate() {
                w.write_record([k.to_string(), c.to_string(), fmt_real(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Value of `π u` at `p`; ties on shared facets follow [`AdmissibleMesh::locate`].
pub fn reconstruct(mesh: &AdmissibleMesh, u: &CellVector, p: Point) -> Result<f64, DiscreteError> {
    check_len(mesh, u.len())?;
    mesh.locate(&p).map(|k| u.get(k)).ok_or(DiscreteError::OutOfDomain(p))
}

pub fn discrete_gradient(mesh: &AdmissibleMesh, v: &CellVector) -> Result<DiamondField, DiscreteError> {
    check_len(mesh, v.len())?;
    let d = mesh.dim() as f64;
    let values = mesh
        .interfaces()
        .iter()
        .map(|s| {
            let (k, l) = s.cells;
            let a = d * (v.get(l) - v.get(k)) / s.distance;
            [a * s.normal[0], a * s.normal[1]]
        })
        .collect();
    Ok(DiamondField {
        dim: mesh.dim(),
        values,
    })
}

/// `Σ_K m_K u_K²`.
pub fn l2_norm_squared(mesh: &AdmissibleMesh, u: &[f64]) -> f64 {
    mesh.cells().iter().zip(u).map(|(c, v)| c.measure * v * v).sum()
}

/// `d Σ_σ τ_σ (u_K − u_L)²`.
pub fn gradient_norm_squared(mesh: &AdmissibleMesh, u: &[f64]) -> f64 {
    let d = mesh.dim() as f64;
    mesh.interfaces()
        .iter()
        .map(|s| s.transmissibility * (u[s.cells.0] - u[s.cells.1]).powi(2))
        .sum::<f64>()
        * d
}

/// `‖v‖_{2,𝒯} = (‖π v‖²_{L²} + ‖∇ v‖²_{L²})^{1/2}`.
pub fn norm_2t(mesh: &AdmissibleMesh, v: &CellVector) -> Result<f64, DiscreteError> {
    check_len(mesh, v.len())?;
    Ok((l2_norm_squared(mesh, v.values()) + gradient_norm_squared(mesh, v.values())).sqrt())
}

/// `‖v‖_{p,m} = (‖π v‖ᵖ_{Lᵖ} + ‖∇ v‖ᵖ_{Lᵖ})^{1/p}`, which is `‖v‖_{2,𝒯}` at `p = 2`.
pub fn norm_pm(mesh: &AdmissibleMesh, v: &[f64], p: f64) -> Result<f64, DiscreteError> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(DiscreteError::InvalidExponent(p));
    }
    check_len(mesh, v.len())?;
    let d = mesh.dim() as f64;
    let cells: f64 = mesh
        .cells()
        .iter()
        .zip(v)
        .map(|(c, x)| c.measure * x.abs().powf(p))
        .sum();
    let grads: f64 = mesh
        .interfaces()
        .iter()
        .enumerate()
        .map(|(s, i)| {
            let g = d * (v[i.cells.0] - v[i.cells.1]).abs() / i.distance;
            mesh.diamond_measure(s) * g.powf(p)
        })
        .sum();
    Ok((cells + grads).powf(1.0 / p))
}

/// `(Σ_{k=1}^n Δt_k ‖u^k‖^q_{p,m})^{1/q}`.
pub fn seminorm_pmqn(
    mesh: &AdmissibleMesh,
    grid: &TimeGrid,
    field: &SpaceTimeField,
    p: f64,
    q: f64,
) -> Result<f64, DiscreteError> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(DiscreteError::InvalidExponent(q));
    }
    check_slots(grid, field)?;
    let mut acc = 0.0;
    for k in 1..=grid.steps() {
        acc += grid.dt(k) * norm_pm(mesh, field.slot(k), p)?.powf(q);
    }
    Ok(acc.powf(1.0 / q))
}

fn check_slots(grid: &TimeGrid, field: &SpaceTimeField) -> Result<(), DiscreteError> {
    if field.num_slots() != grid.steps() + 1 {
        return Err(DiscreteError::SlotMismatch {
            expected: grid.steps() + 1,
            got: field.num_slots(),
        });
    }
    Ok(())
}

/// Cell averages `φ_K = (1/m_K) ∫_K φ`.
pub fn project(mesh: &AdmissibleMesh, f: impl Fn(Point) -> f64) -> CellVector {
    CellVector(
        mesh.cells()
            .iter()
            .map(|c| quadrature::cell_integral(&c.shape, &f) / c.measure)
            .collect(),
    )
}

/// Time-dependent projection: slot 0 is `P φ(·, 0)` and slot `k ≥ 1` is `P φ(·, t_{k−1})`.
pub fn project_space_time(mesh: &AdmissibleMesh, grid: &TimeGrid, f: impl Fn(Point, f64) -> f64) -> SpaceTimeField {
    let mut out = SpaceTimeField::zeros(0, mesh.num_cells());
    out.push_slot(project(mesh, |p| f(p, 0.0)).values());
    for k in 1..=grid.steps() {
        let t = grid.time(k - 1);
        out.push_slot(project(mesh, |p| f(p, t)).values());
    }
    out
}

/// `Σ_{k=1}^n Δt_k Σ_K ω_K m_K a_K^k b_K^k`, the integral of `ω π a · π b` over `Q_T`.
pub fn space_time_pairing(
    mesh: &AdmissibleMesh,
    grid: &TimeGrid,
    weights: &WeightField,
    a: &SpaceTimeField,
    b: &SpaceTimeField,
) -> Result<f64, DiscreteError> {
    check_slots(grid, a)?;
    check_slots(grid, b)?;
    check_len(mesh, a.num_cells())?;
    check_len(mesh, b.num_cells())?;
    let w = weights.values();
    let mut total = 0.0;
    for k in 1..=grid.steps() {
        let s: f64 = mesh
            .cells()
            .iter()
            .enumerate()
            .map(|(c, cell)| w[c] * cell.measure * a.slot(k)[c] * b.slot(k)[c])
            .sum();
        total += grid.dt(k) * s;
    }
    Ok(total)
}

/// `d (1 + 2ρ)`, the constant in `‖∇ P φ‖_∞ ≤ d(1 + 2ρ) ‖∇φ‖_∞`.
pub fn projection_gradient_constant(mesh: &AdmissibleMesh) -> f64 {
    mesh.dim() as f64 * (1.0 + 2.0 * mesh.rho())
}

/// `‖π v(· + ζ) − π v‖_{L²(ℝᵈ)} / ‖v‖_{2,𝒯}`, extending `π v` by zero outside `Ω`.
///
/// Meshes made of intervals or axis-aligned rectangles use exact overlap areas; other
/// meshes use a refined subcell quadrature, which is only accurate to the quadrature
/// resolution because the integrand jumps inside cells.
pub fn translate_estimate_probe(mesh: &AdmissibleMesh, v: &CellVector, zeta: Point) -> Result<f64, DiscreteError> {
    let norm = norm_2t(mesh, v)?;
    if norm == 0.0 {
        return Err(DiscreteError::ZeroVector);
    }
    let diff_sq = if mesh.is_cartesian() {
        let self_sq = l2_norm_squared(mesh, v.values());
        (2.0 * self_sq - 2.0 * shifted_overlap(mesh, v.values(), zeta)).max(0.0)
    } else {
        translate_by_quadrature(mesh, v.values(), zeta)
    };
    Ok(diff_sq.sqrt() / norm)
}

fn cell_box(shape: &CellShape) -> (Point, Point) {
    match shape {
        CellShape::Interval { a, b } => ([*a, 0.0], [*b, 0.0]),
        _ => shape.as_box().expect("cartesian cell"),
    }
}

fn box_overlap(dim: usize, a: (Point, Point), b: (Point, Point)) -> f64 {
    (0..dim)
        .map(|ax| (a.1[ax].min(b.1[ax]) - a.0[ax].max(b.0[ax])).max(0.0))
        .product()
}

/// `∫ f(x + ζ) f(x) dx = Σ_{K,L} v_K v_L |K ∩ (L + ζ)|`.
fn shifted_overlap(mesh: &AdmissibleMesh, v: &[f64], zeta: Point) -> f64 {
    let dim = mesh.dim();
    let boxes: Vec<(Point, Point)> = mesh.cells().iter().map(|c| cell_box(&c.shape)).collect();
    let shifted = |b: (Point, Point)| {
        (
            [b.0[0] + zeta[0], b.0[1] + zeta[1]],
            [b.1[0] + zeta[0], b.1[1] + zeta[1]],
        )
    };
    let mut total = 0.0;
    if let Some(counts) = mesh.grid_counts() {
        let (lo, hi) = mesh.bounding_box();
        let width: Vec<f64> = (0..dim).map(|ax| (hi[ax] - lo[ax]) / counts[ax] as f64).collect();
        let range = |ax: usize, a: f64, b: f64| {
            let n = counts[ax] as isize;
            let i0 = (((a - lo[ax]) / width[ax]).floor() as isize - 1).clamp(0, n);
            let i1 = (((b - lo[ax]) / width[ax]).ceil() as isize + 1).clamp(0, n);
            i0 as usize..i1 as usize
        };
        for (l, bl) in boxes.iter().enumerate() {
            if v[l] == 0.0 {
                continue;
            }
            let b = shifted(*bl);
            let xs = range(0, b.0[0], b.1[0]);
            let ys = if dim == 2 { range(1, b.0[1], b.1[1]) } else { 0..1 };
            for j in ys {
                for i in xs.clone() {
                    let k = i + j * counts[0];
                    total += v[k] * v[l] * box_overlap(dim, boxes[k], b);
                }
            }
        }
    } else {
        for (l, bl) in boxes.iter().enumerate() {
            if v[l] == 0.0 {
                continue;
            }
            let b = shifted(*bl);
            for (k, bk) in boxes.iter().enumerate() {
                total += v[k] * v[l] * box_overlap(dim, *bk, b);
            }
        }
    }
    total
}

fn translate_by_quadrature(mesh: &AdmissibleMesh, v: &[f64], zeta: Point) -> f64 {
    // ∫_{ℝᵈ} (f(x+ζ) − f(x))² = ∫_Ω (f(x+ζ) − f(x))² + ‖f‖² − ∫_Ω f(x+ζ)²
    let f = |p: Point| mesh.locate(&p).map_or(0.0, |k| v[k]);
    let mut inside = 0.0;
    let mut shifted_sq = 0.0;
    for (k, c) in mesh.cells().iter().enumerate() {
        for (p, w) in quadrature::cell_rule_refined(&c.shape, 4) {
            let s = f([p[0] + zeta[0], p[1] + zeta[1]]);
            inside += w * (s - v[k]).powi(2);
            shifted_sq += w * s * s;
        }
    }
    (inside + l2_norm_squared(mesh, v) - shifted_sq).max(0.0)
}

/// True when `v_K ∈ β(u_K)` for every cell, up to `tol`.
pub fn graph_compatibility_check(u: &CellVector, v: &CellVector, graph: &MonotoneGraph, tol: f64) -> bool {
    u.len() == v.len()
        && u.values()
            .iter()
            .zip(v.values())
            .all(|(&x, &y)| graph.contains(x, y, tol))
}
