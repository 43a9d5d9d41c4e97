//! Admissible finite-volume meshes.
//!
//! A mesh is a tessellation of a polygonal domain into convex cells, each carrying a center
//! `x_K` such that the segment joining the centers of two neighbours crosses their common
//! interface orthogonally. Every geometric quantity used by the two-point flux scheme is
//! precomputed here: cell measures `m_K`, interface measures `m_KL`, center distances,
//! unit normals, transmissibilities `τ_KL = m_KL / |x_K − x_L|`, the mesh size `h` and the
//! regularity number `ρ`.
//!
//! In one space dimension interfaces are points and carry the counting measure `m_KL = 1`.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Points are stored with two coordinates; the second one is zero in 1D.
pub type Point = [f64; 2];

/// Default relative tolerance for the orthogonality and measure checks.
pub const DEFAULT_GEOMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("orthogonality violated on interface {interface} (cells {cell_k}-{cell_l}): residual {residual:e}")]
    Orthogonality {
        interface: usize,
        cell_k: usize,
        cell_l: usize,
        residual: f64,
    },
    #[error("mesh is not admissible: {0}")]
    NotAdmissible(String),
    #[error("unsupported dimension {0} (only 1 and 2 are supported)")]
    UnsupportedDimension(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Geometry of a single control volume.
#[derive(Debug, Clone, PartialEq)]
pub enum CellShape {
    Interval {
        a: f64,
        b: f64,
    },
    /// Convex polygon, vertices in counter-clockwise order.
    Polygon(Vec<Point>),
}

impl CellShape {
    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            CellShape::Interval { a, b } => ([*a, 0.0], [*b, 0.0]),
            CellShape::Polygon(v) => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for p in v {
                    for ax in 0..2 {
                        lo[ax] = lo[ax].min(p[ax]);
                        hi[ax] = hi[ax].max(p[ax]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Returns the box corners if the cell is an interval or an axis-aligned rectangle.
    pub fn as_box(&self) -> Option<(Point, Point)> {
        match self {
            CellShape::Interval { .. } => Some(self.bounding_box()),
            CellShape::Polygon(v) => {
                if v.len() != 4 {
                    return None;
                }
                let (lo, hi) = self.bounding_box();
                let on_corner = |p: &Point| (p[0] == lo[0] || p[0] == hi[0]) && (p[1] == lo[1] || p[1] == hi[1]);
                if v.iter().all(on_corner) && polygon_area(v) > 0.0 {
                    Some((lo, hi))
                } else {
                    None
                }
            }
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            CellShape::Interval { a, b } => b - a,
            CellShape::Polygon(v) => polygon_area(v),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            CellShape::Interval { a, b } => (b - a).abs(),
            CellShape::Polygon(v) => {
                let mut d: f64 = 0.0;
                for (i, p) in v.iter().enumerate() {
                    for q in &v[i + 1..] {
                        d = d.max(dist(p, q));
                    }
                }
                d
            }
        }
    }

    /// Closed containment test with an absolute slack `eps`.
    pub fn contains(&self, p: &Point, eps: f64) -> bool {
        match self {
            CellShape::Interval { a, b } => p[0] >= a - eps && p[0] <= b + eps,
            CellShape::Polygon(v) => {
                let n = v.len();
                (0..n).all(|i| {
                    let a = v[i];
                    let b = v[(i + 1) % n];
                    let e = [b[0] - a[0], b[1] - a[1]];
                    let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
                    let cross = e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0]);
                    cross >= -eps * len
                })
            }
        }
    }

    /// Strict interior test: distance to every facet larger than `eps`.
    fn contains_strictly(&self, p: &Point, eps: f64) -> bool {
        match self {
            CellShape::Interval { a, b } => p[0] > a + eps && p[0] < b - eps,
            CellShape::Polygon(v) => {
                let n = v.len();
                (0..n).all(|i| {
                    let a = v[i];
                    let b = v[(i + 1) % n];
                    let e = [b[0] - a[0], b[1] - a[1]];
                    let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
                    let cross = e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0]);
                    cross > eps * len
                })
            }
        }
    }

    /// Facets of the cell: endpoints in 1D, edges in 2D.
    fn facets(&self) -> Vec<Vec<Point>> {
        match self {
            CellShape::Interval { a, b } => vec![vec![[*a, 0.0]], vec![[*b, 0.0]]],
            CellShape::Polygon(v) => (0..v.len()).map(|i| vec![v[i], v[(i + 1) % v.len()]]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub center: Point,
    pub measure: f64,
    pub shape: CellShape,
    pub diameter: f64,
}

/// Interior interface `σ_KL`, stored once with `cells.0 < cells.1` for built meshes
/// (loaded meshes keep the file order).
#[derive(Debug, Clone)]
pub struct Interface {
    pub cells: (usize, usize),
    /// `m_KL`; 1 in 1D.
    pub measure: f64,
    /// `|x_K − x_L|`.
    pub distance: f64,
    /// Unit normal pointing from `cells.0` to `cells.1`.
    pub normal: Point,
    pub transmissibility: f64,
    /// One point in 1D, the two edge endpoints in 2D.
    pub vertices: Vec<Point>,
}

/// Oriented view of an interface as seen from one of its cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedInterface {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub measure: f64,
    pub distance: f64,
    pub normal: Point,
    pub transmissibility: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub cell: usize,
    pub measure: f64,
}

/// Axis-aligned box domain `[lo, hi]` in 1 or 2 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: &[f64], hi: &[f64]) -> Self {
        Self {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(&vec![0.0; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

#[derive(Debug, Clone)]
pub struct AdmissibleMesh {
    dim: usize,
    cells: Vec<Cell>,
    interfaces: Vec<Interface>,
    boundary: Vec<BoundaryFace>,
    /// For each cell, `(interface id, neighbour id)`.
    neighbours: Vec<Vec<(usize, usize)>>,
    domain_measure: f64,
    h: f64,
    rho: f64,
    /// Present for Cartesian grids; enables O(1) point location.
    grid: Option<GridLayout>,
}

#[derive(Debug, Clone, PartialEq)]
struct GridLayout {
    domain: BoxDomain,
    counts: Vec<usize>,
}

impl AdmissibleMesh {
    /// Assembles a mesh from cells and interfaces, computing every derived quantity.
    ///
    /// `domain_measure` is the measure of `Ω` the cell measures must add up to.
    pub fn from_parts(
        dim: usize,
        cells: Vec<Cell>,
        interfaces: Vec<Interface>,
        domain_measure: f64,
    ) -> Result<Self, MeshError> {
        if !(1..=2).contains(&dim) {
            return Err(MeshError::UnsupportedDimension(dim));
        }
        if cells.is_empty() {
            return Err(MeshError::InvalidGeometry("mesh has no cells".into()));
        }
        let mut neighbours = vec![Vec::new(); cells.len()];
        for (id, s) in interfaces.iter().enumerate() {
            let (k, l) = s.cells;
            if k >= cells.len() || l >= cells.len() || k == l {
                return Err(MeshError::InvalidGeometry(format!(
                    "interface {id} references invalid cells {k}-{l}"
                )));
            }
            neighbours[k].push((id, l));
            neighbours[l].push((id, k));
        }
        let boundary = boundary_faces(dim, &cells, &interfaces);
        let h = cells.iter().map(|c| c.diameter).fold(0.0, f64::max);
        let rho = (0..cells.len())
            .map(|k| {
                neighbours[k]
                    .iter()
                    .map(|&(s, _)| {
                        let f = &interfaces[s];
                        f.measure * f.distance / cells[k].measure + cells[k].diameter / f.distance
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        Ok(Self {
            dim,
            cells,
            interfaces,
            boundary,
            neighbours,
            domain_measure,
            h,
            rho,
            grid: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, k: usize) -> &Cell {
        &self.cells[k]
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary
    }

    /// `(interface id, neighbour id)` pairs of cell `k`.
    pub fn neighbours(&self, k: usize) -> &[(usize, usize)] {
        &self.neighbours[k]
    }

    pub fn domain_measure(&self) -> f64 {
        self.domain_measure
    }

    /// Mesh size `h = max_K diam(K)`.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Regularity `ρ = max_K Σ_L (m_KL |x_K − x_L| / m_K + diam(K) / |x_K − x_L|)`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn measures(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.measure).collect()
    }

    /// Measure of the diamond `D_KL`, i.e. `m_KL |x_K − x_L| / d`.
    pub fn diamond_measure(&self, s: usize) -> f64 {
        let f = &self.interfaces[s];
        f.measure * f.distance / self.dim as f64
    }

    /// The interface between `k` and `l` oriented from `k` to `l`.
    pub fn interface_between(&self, k: usize, l: usize) -> Option<OrientedInterface> {
        self.neighbours
            .get(k)?
            .iter()
            .find(|&&(_, other)| other == l)
            .map(|&(s, _)| self.oriented(s, k))
    }

    /// Interface `s` seen from cell `from` (which must be one of its two cells).
    pub fn oriented(&self, s: usize, from: usize) -> OrientedInterface {
        let f = &self.interfaces[s];
        let (to, sign) = if f.cells.0 == from {
            (f.cells.1, 1.0)
        } else {
            debug_assert_eq!(f.cells.1, from);
            (f.cells.0, -1.0)
        };
        OrientedInterface {
            id: s,
            from,
            to,
            measure: f.measure,
            distance: f.distance,
            normal: [sign * f.normal[0], sign * f.normal[1]],
            transmissibility: f.transmissibility,
        }
    }

    /// Bounding box of the domain.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &self.cells {
            let (a, b) = c.shape.bounding_box();
            for ax in 0..2 {
                lo[ax] = lo[ax].min(a[ax]);
                hi[ax] = hi[ax].max(b[ax]);
            }
        }
        (lo, hi)
    }

    /// Cells per axis when the mesh was built as a uniform grid.
    pub fn grid_counts(&self) -> Option<&[usize]> {
        self.grid.as_ref().map(|g| g.counts.as_slice())
    }

    /// True when every cell is an interval or an axis-aligned rectangle.
    pub fn is_cartesian(&self) -> bool {
        self.cells.iter().all(|c| c.shape.as_box().is_some())
    }

    /// Locates the cell containing `p`.
    ///
    /// Cells are treated as half-open along each axis in lexicographic order: a point on
    /// the interface between two cells belongs to the cell lying on its upper side, except
    /// on the upper boundary of the domain where the closed cell is used.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        if let Some(g) = &self.grid {
            let mut idx = 0;
            let mut stride = 1;
            for ax in 0..self.dim {
                let (lo, hi) = (g.domain.lo[ax], g.domain.hi[ax]);
                if p[ax] < lo || p[ax] > hi {
                    return None;
                }
                let n = g.counts[ax];
                let width = (hi - lo) / n as f64;
                let mut i = ((p[ax] - lo) / width).floor() as usize;
                // floor can land one cell off near a face due to rounding
                let lower = |i: usize| lo + i as f64 * width;
                if i > 0 && p[ax] < lower(i) {
                    i -= 1;
                }
                if i + 1 < n && p[ax] >= lower(i + 1) {
                    i += 1;
                }
                idx += i.min(n - 1) * stride;
                stride *= n;
            }
            return Some(idx);
        }
        let scale = self.h.max(f64::MIN_POSITIVE);
        let eps = 1e-12 * scale;
        let candidates: Vec<usize> = (0..self.cells.len())
            .filter(|&k| self.cells[k].shape.contains(p, eps))
            .collect();
        match candidates.len() {
            0 => None,
            1 => Some(candidates[0]),
            _ => {
                // Tie on a shared facet: nudge along (1, η) so the upper/right cell wins.
                let eta = 1e-7 * scale;
                let nudged = [p[0] + eta, p[1] + eta * 1e-3];
                candidates
                    .iter()
                    .copied()
                    .find(|&k| self.cells[k].shape.contains_strictly(&nudged, 0.0))
                    .or_else(|| candidates.last().copied())
            }
        }
    }
}

/// Builds a Cartesian grid on `domain` with `counts[ax]` cells along each axis.
///
/// Cells are numbered lexicographically with the first axis running fastest and centers
/// are the cell centroids.
pub fn build_uniform_grid(domain: &BoxDomain, counts: &[usize]) -> Result<AdmissibleMesh, MeshError> {
    let dim = domain.dim();
    if !(1..=2).contains(&dim) {
        return Err(MeshError::UnsupportedDimension(dim));
    }
    if domain.hi.len() != dim || counts.len() != dim {
        return Err(MeshError::InvalidGeometry(
            "box bounds and cell counts must have the same dimension".into(),
        ));
    }
    for ax in 0..dim {
        let extent = domain.hi[ax] - domain.lo[ax];
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(MeshError::InvalidGeometry(format!(
                "box extent along axis {ax} is {extent}"
            )));
        }
        if counts[ax] == 0 {
            return Err(MeshError::InvalidGeometry(format!("zero cells along axis {ax}")));
        }
    }
    let coord = |ax: usize, i: usize| {
        let n = counts[ax];
        if i == n {
            domain.hi[ax]
        } else {
            domain.lo[ax] + (domain.hi[ax] - domain.lo[ax]) * i as f64 / n as f64
        }
    };
    let mut cells = Vec::new();
    let mut interfaces = Vec::new();
    match dim {
        1 => {
            let n = counts[0];
            for i in 0..n {
                let (a, b) = (coord(0, i), coord(0, i + 1));
                cells.push(Cell {
                    center: [0.5 * (a + b), 0.0],
                    measure: b - a,
                    shape: CellShape::Interval { a, b },
                    diameter: b - a,
                });
            }
            for i in 0..n.saturating_sub(1) {
                let x = coord(0, i + 1);
                interfaces.push(make_interface(&cells, i, i + 1, 1.0, vec![[x, 0.0]]));
            }
        }
        _ => {
            let (nx, ny) = (counts[0], counts[1]);
            for j in 0..ny {
                for i in 0..nx {
                    let (x0, x1) = (coord(0, i), coord(0, i + 1));
                    let (y0, y1) = (coord(1, j), coord(1, j + 1));
                    let shape = CellShape::Polygon(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]);
                    cells.push(Cell {
                        center: [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
                        measure: (x1 - x0) * (y1 - y0),
                        diameter: shape.diameter(),
                        shape,
                    });
                }
            }
            for j in 0..ny {
                for i in 0..nx {
                    let k = i + nx * j;
                    if i + 1 < nx {
                        let x = coord(0, i + 1);
                        let (y0, y1) = (coord(1, j), coord(1, j + 1));
                        interfaces.push(make_interface(&cells, k, k + 1, y1 - y0, vec![[x, y0], [x, y1]]));
                    }
                    if j + 1 < ny {
                        let y = coord(1, j + 1);
                        let (x0, x1) = (coord(0, i), coord(0, i + 1));
                        interfaces.push(make_interface(&cells, k, k + nx, x1 - x0, vec![[x0, y], [x1, y]]));
                    }
                }
            }
        }
    }
    let mut mesh = AdmissibleMesh::from_parts(dim, cells, interfaces, domain.measure())?;
    mesh.grid = Some(GridLayout {
        domain: domain.clone(),
        counts: counts.to_vec(),
    });
    Ok(mesh)
}

fn make_interface(cells: &[Cell], k: usize, l: usize, measure: f64, vertices: Vec<Point>) -> Interface {
    let (xk, xl) = (cells[k].center, cells[l].center);
    let distance = dist(&xk, &xl);
    Interface {
        cells: (k, l),
        measure,
        distance,
        normal: [(xl[0] - xk[0]) / distance, (xl[1] - xk[1]) / distance],
        transmissibility: measure / distance,
        vertices,
    }
}

fn boundary_faces(dim: usize, cells: &[Cell], interfaces: &[Interface]) -> Vec<BoundaryFace> {
    let tol = 1e-10 * cells.iter().map(|c| c.diameter).fold(0.0, f64::max);
    let mut out = Vec::new();
    for (k, c) in cells.iter().enumerate() {
        for facet in c.shape.facets() {
            let shared = interfaces
                .iter()
                .any(|s| (s.cells.0 == k || s.cells.1 == k) && same_facet(&facet, &s.vertices, tol));
            if !shared {
                let measure = if dim == 1 { 1.0 } else { dist(&facet[0], &facet[1]) };
                out.push(BoundaryFace { cell: k, measure });
            }
        }
    }
    out
}

fn same_facet(a: &[Point], b: &[Point], tol: f64) -> bool {
    match (a.len(), b.len()) {
        (1, 1) => dist(&a[0], &b[0]) <= tol,
        (2, 2) => {
            (dist(&a[0], &b[0]) <= tol && dist(&a[1], &b[1]) <= tol)
                || (dist(&a[0], &b[1]) <= tol && dist(&a[1], &b[0]) <= tol)
        }
        _ => false,
    }
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Signed shoelace area.
pub fn polygon_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

pub fn polygon_centroid(v: &[Point]) -> Point {
    let n = v.len();
    let area = polygon_area(v);
    let mut c = [0.0; 2];
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let cross = a[0] * b[1] - b[0] * a[1];
        c[0] += (a[0] + b[0]) * cross;
        c[1] += (a[1] + b[1]) * cross;
    }
    [c[0] / (6.0 * area), c[1] / (6.0 * area)]
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed residual (relative where the check is relative).
    pub worst: f64,
    /// Offending item (cell or interface id) for the worst residual, if any.
    pub worst_item: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub h: f64,
    pub rho: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "{status} {:<28} worst={:.3e}", c.name, c.worst)?;
            if let Some(item) = c.worst_item {
                write!(f, " at {item}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "h = {:.17e}", self.h)?;
        write!(f, "rho = {:.17e}", self.rho)
    }
}

/// Runs every admissibility check with the default tolerance.
pub fn validate_admissible(mesh: &AdmissibleMesh) -> ValidationReport {
    validate_admissible_with(mesh, DEFAULT_GEOMETRY_TOLERANCE)
}

pub fn validate_admissible_with(mesh: &AdmissibleMesh, tol: f64) -> ValidationReport {
    let mut checks = Vec::new();
    let total: f64 = mesh.cells.iter().map(|c| c.measure).sum();
    let rel = (total - mesh.domain_measure).abs() / mesh.domain_measure.abs().max(f64::MIN_POSITIVE);
    checks.push(CheckResult {
        name: "measure_sum",
        passed: rel <= tol,
        worst: rel,
        worst_item: None,
    });

    let mut worst = Worst::default();
    for (k, c) in mesh.cells.iter().enumerate() {
        let geo = c.shape.measure();
        worst.update((c.measure - geo).abs() / geo.abs().max(f64::MIN_POSITIVE), k);
    }
    checks.push(worst.into_check("cell_measure_matches_shape", tol));

    let mut worst = Worst::default();
    for (s, f) in mesh.interfaces.iter().enumerate() {
        let (xk, xl) = (mesh.cells[f.cells.0].center, mesh.cells[f.cells.1].center);
        let r = match f.vertices.len() {
            2 => {
                let e = [f.vertices[1][0] - f.vertices[0][0], f.vertices[1][1] - f.vertices[0][1]];
                let d = [xk[0] - xl[0], xk[1] - xl[1]];
                let elen = (e[0] * e[0] + e[1] * e[1]).sqrt();
                (d[0] * e[0] + d[1] * e[1]).abs() / (elen * f.distance).max(f64::MIN_POSITIVE)
            }
            // a point interface in 1D is always orthogonal; check it sits between the centers
            _ => {
                let x = f.vertices.first().map(|p| p[0]).unwrap_or(0.5 * (xk[0] + xl[0]));
                if (x - xk[0]) * (x - xl[0]) <= 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        };
        worst.update(r, s);
    }
    checks.push(worst.into_check("orthogonality", tol));

    let mut worst = Worst::default();
    let eps = tol * mesh.h.max(f64::MIN_POSITIVE);
    for (k, c) in mesh.cells.iter().enumerate() {
        worst.update(if c.shape.contains(&c.center, eps) { 0.0 } else { 1.0 }, k);
    }
    checks.push(worst.into_check("center_inside_cell", 0.0));

    let mut worst = Worst::default();
    for (s, f) in mesh.interfaces.iter().enumerate() {
        let ok = f.transmissibility > 0.0 && f.measure > 0.0 && f.distance > 0.0;
        worst.update(if ok { 0.0 } else { 1.0 }, s);
    }
    for c in &mesh.cells {
        if !(c.measure > 0.0) {
            worst.update(1.0, usize::MAX);
        }
    }
    checks.push(worst.into_check("positive_quantities", 0.0));

    // Diamond measure computed from its triangles (2D) or segment (1D) vs m_KL |x_K−x_L| / d.
    let mut worst = Worst::default();
    let mut diamond_total = 0.0;
    for (s, f) in mesh.interfaces.iter().enumerate() {
        let (xk, xl) = (mesh.cells[f.cells.0].center, mesh.cells[f.cells.1].center);
        let geo = match f.vertices.len() {
            2 => {
                let (a, b) = (f.vertices[0], f.vertices[1]);
                polygon_area(&[a, b, xk]).abs() + polygon_area(&[a, b, xl]).abs()
            }
            _ => dist(&xk, &xl),
        };
        let formula = mesh.diamond_measure(s);
        diamond_total += geo;
        worst.update((geo - formula).abs() / formula.abs().max(f64::MIN_POSITIVE), s);
    }
    checks.push(worst.into_check("diamond_measure", 1e3 * tol));
    let excess = (diamond_total - mesh.domain_measure) / mesh.domain_measure;
    checks.push(CheckResult {
        name: "diamonds_within_domain",
        passed: excess <= tol,
        worst: excess.max(0.0),
        worst_item: None,
    });

    let mut worst = Worst::default();
    for (s, f) in mesh.interfaces.iter().enumerate() {
        let (k, l) = f.cells;
        let r = match (mesh.interface_between(k, l), mesh.interface_between(l, k)) {
            (Some(a), Some(b)) => {
                let n = (a.normal[0] + b.normal[0]).abs() + (a.normal[1] + b.normal[1]).abs();
                n + (a.transmissibility - b.transmissibility).abs()
            }
            _ => 1.0,
        };
        worst.update(r, s);
    }
    checks.push(worst.into_check("interface_symmetry", tol));

    ValidationReport {
        checks,
        h: mesh.h,
        rho: mesh.rho,
    }
}

#[derive(Default)]
struct Worst {
    value: f64,
    item: Option<usize>,
}

impl Worst {
    fn update(&mut self, v: f64, item: usize) {
        if v > self.value || (v.is_nan() && !self.value.is_nan()) {
            self.value = v;
            self.item = Some(item);
        }
    }

    fn into_check(self, name: &'static str, tol: f64) -> CheckResult {
        CheckResult {
            name,
            passed: self.value <= tol,
            worst: self.value,
            worst_item: self.item,
        }
    }
}

// ---------------------------------------------------------------------------
// Text format
//
//     # comment
//     <dim> <n_cells> <n_interfaces>
//     <id> <center (dim coords)> <measure> <geometry>      (n_cells lines)
//     <idK> <idL> <measure>                                (n_interfaces lines)
//
// Cell geometry is `a b` (interval endpoints) for d = 1 and `k x1 y1 ... xk yk`
// (counter-clockwise convex polygon) for d = 2. Distances, normals and transmissibilities
// are derived from the centers; interface vertices are the facet shared by the two cells.

/// Parses the mesh text format and validates the result.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<AdmissibleMesh, MeshError> {
    let text = fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<AdmissibleMesh, MeshError> {
    parse_mesh_with(text, DEFAULT_GEOMETRY_TOLERANCE)
}

pub fn parse_mesh_with(text: &str, tol: f64) -> Result<AdmissibleMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| MeshError::InvalidGeometry("empty mesh file".into()))?;
    let header = parse_numbers::<usize>(header, hline)?;
    if header.len() != 3 {
        return Err(parse_err(hline, "header must be `dim n_cells n_interfaces`"));
    }
    let (dim, n_cells, n_interfaces) = (header[0], header[1], header[2]);
    if !(1..=2).contains(&dim) {
        return Err(MeshError::UnsupportedDimension(dim));
    }
    if n_cells == 0 {
        return Err(MeshError::InvalidGeometry("mesh has no cells".into()));
    }

    let mut slots: Vec<Option<Cell>> = vec![None; n_cells];
    for _ in 0..n_cells {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(usize::MAX, "unexpected end of file in cell section"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        let id: usize = tok
            .first()
            .ok_or_else(|| parse_err(ln, "missing cell id"))?
            .parse()
            .map_err(|_| parse_err(ln, "cell id is not an integer"))?;
        if id >= n_cells || slots[id].is_some() {
            return Err(parse_err(ln, &format!("cell id {id} out of range or duplicated")));
        }
        let nums = parse_numbers::<f64>(&tok[1..].join(" "), ln)?;
        let need = dim + 1;
        if nums.len() < need {
            return Err(parse_err(ln, "cell line needs center coordinates and measure"));
        }
        let mut center = [0.0; 2];
        center[..dim].copy_from_slice(&nums[..dim]);
        let measure = nums[dim];
        let geo = &nums[need..];
        let shape = if dim == 1 {
            if geo.len() != 2 {
                return Err(parse_err(ln, "1D cell geometry is `a b`"));
            }
            CellShape::Interval { a: geo[0], b: geo[1] }
        } else {
            let k = geo.first().copied().unwrap_or(0.0);
            if k < 3.0 || k.fract() != 0.0 || geo.len() != 1 + 2 * k as usize {
                return Err(parse_err(ln, "2D cell geometry is `k x1 y1 ... xk yk` with k >= 3"));
            }
            CellShape::Polygon(geo[1..].chunks(2).map(|c| [c[0], c[1]]).collect())
        };
        if !(shape.measure() > 0.0) {
            return Err(MeshError::InvalidGeometry(format!(
                "cell {id} (line {ln}) has non-positive geometric measure"
            )));
        }
        slots[id] = Some(Cell {
            center,
            measure,
            diameter: shape.diameter(),
            shape,
        });
    }
    let cells: Vec<Cell> = slots.into_iter().map(|c| c.expect("all ids seen")).collect();

    let tol_len = 1e-9 * cells.iter().map(|c| c.diameter).fold(0.0, f64::max);
    let mut interfaces = Vec::with_capacity(n_interfaces);
    for s in 0..n_interfaces {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(usize::MAX, "unexpected end of file in interface section"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 3 {
            return Err(parse_err(ln, "interface line is `idK idL measure`"));
        }
        let k: usize = tok[0].parse().map_err(|_| parse_err(ln, "bad cell id"))?;
        let l: usize = tok[1].parse().map_err(|_| parse_err(ln, "bad cell id"))?;
        let measure: f64 = tok[2].parse().map_err(|_| parse_err(ln, "bad interface measure"))?;
        if k >= n_cells || l >= n_cells || k == l {
            return Err(parse_err(
                ln,
                &format!("interface {s} references invalid cells {k}-{l}"),
            ));
        }
        let shared = cells[k]
            .shape
            .facets()
            .into_iter()
            .find(|fk| cells[l].shape.facets().iter().any(|fl| same_facet(fk, fl, tol_len)))
            .ok_or_else(|| MeshError::InvalidGeometry(format!("cells {k} and {l} (line {ln}) share no facet")))?;
        interfaces.push(make_interface(&cells, k, l, measure, shared));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content after interface section"));
    }

    let domain_measure = cells.iter().map(|c| c.shape.measure()).sum();
    let mesh = AdmissibleMesh::from_parts(dim, cells, interfaces, domain_measure)?;
    let report = validate_admissible_with(&mesh, tol);
    if let Some(c) = report.check("orthogonality").filter(|c| !c.passed) {
        let s = c.worst_item.unwrap_or(0);
        let (cell_k, cell_l) = mesh.interfaces[s].cells;
        return Err(MeshError::Orthogonality {
            interface: s,
            cell_k,
            cell_l,
            residual: c.worst,
        });
    }
    if !report.passed() {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} (worst {:.3e})", c.name, c.worst))
            .collect();
        return Err(MeshError::NotAdmissible(failed.join(", ")));
    }
    Ok(mesh)
}

/// Writes a mesh in the text format read by [`load_mesh`].
pub fn write_mesh(mesh: &AdmissibleMesh) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# admissible mesh: {} cells, {} interfaces\n{} {} {}\n",
        mesh.num_cells(),
        mesh.interfaces.len(),
        mesh.dim,
        mesh.num_cells(),
        mesh.interfaces.len()
    ));
    for (k, c) in mesh.cells.iter().enumerate() {
        out.push_str(&k.to_string());
        for ax in 0..mesh.dim {
            out.push_str(&format!(" {}", c.center[ax]));
        }
        out.push_str(&format!(" {}", c.measure));
        match &c.shape {
            CellShape::Interval { a, b } => out.push_str(&format!(" {a} {b}")),
            CellShape::Polygon(v) => {
                out.push_str(&format!(" {}", v.len()));
                for p in v {
                    out.push_str(&format!(" {} {}", p[0], p[1]));
                }
            }
        }
        out.push('\n');
    }
    for f in &mesh.interfaces {
        out.push_str(&format!("{} {} {}\n", f.cells.0, f.cells.1, f.measure));
    }
    out
}

fn parse_numbers<T: std::str::FromStr>(s: &str, line: usize) -> Result<Vec<T>, MeshError> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| parse_err(line, &format!("cannot parse `{t}`")))
        })
        .collect()
}

fn parse_err(line: usize, message: &str) -> MeshError {
    MeshError::Parse {
        line,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_cells() -> AdmissibleMesh {
        build_uniform_grid(&BoxDomain::unit(2), &[2, 1]).unwrap()
    }

    #[test]
    fn two_cell_interface_geometry() {
        let m = two_cells();
        assert_eq!(m.interfaces().len(), 1);
        let f = &m.interfaces()[0];
        assert_eq!(f.measure, 1.0);
        assert_eq!(f.distance, 0.5);
        assert_eq!(f.transmissibility, 2.0);
        assert_eq!(m.cell(0).center, [0.25, 0.5]);
        assert_eq!(m.cell(1).center, [0.75, 0.5]);
        assert_eq!(f.normal, [1.0, 0.0]);
    }

    #[test]
    fn two_cell_regularity() {
        let m = two_cells();
        // one neighbour: 1*0.5/0.5 + sqrt(1.25)/0.5
        let expected = 1.0 + 1.25f64.sqrt() / 0.5;
        assert_relative_eq!(m.rho(), expected, max_relative = 1e-15);
        assert_relative_eq!(m.rho(), 3.23607, epsilon = 1e-5);
        assert_relative_eq!(m.diamond_measure(0), 0.25);
    }

    #[test]
    fn single_interval() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[1]).unwrap();
        assert!(m.interfaces().is_empty());
        assert_eq!(m.h(), 1.0);
        assert_eq!(m.boundary_faces().len(), 2);
        assert!(validate_admissible(&m).passed());
    }

    #[test]
    fn bad_boxes_rejected() {
        let e = build_uniform_grid(&BoxDomain::new(&[0.0, 0.0], &[0.0, 1.0]), &[2, 2]);
        assert!(matches!(e, Err(MeshError::InvalidGeometry(_))));
        let e = build_uniform_grid(&BoxDomain::new(&[1.0], &[0.0]), &[2]);
        assert!(matches!(e, Err(MeshError::InvalidGeometry(_))));
        let e = build_uniform_grid(&BoxDomain::unit(1), &[0]);
        assert!(matches!(e, Err(MeshError::InvalidGeometry(_))));
    }

    #[test]
    fn uniform_4x4_passes_and_rho_closed_form() {
        let m = build_uniform_grid(&BoxDomain::unit(2), &[4, 4]).unwrap();
        let r = validate_admissible(&m);
        assert!(r.passed(), "{r}");
        // interior cell: 4 neighbours, each m_KL|x|/m_K = 0.25*0.25/0.0625 = 1 and
        // diam/|x| = (0.25*sqrt 2)/0.25 = sqrt 2
        assert_relative_eq!(r.rho, 4.0 * (1.0 + 2f64.sqrt()), max_relative = 1e-14);
        assert_relative_eq!(r.h, 0.25 * 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn refinement_halves_h_keeps_rho() {
        let d = BoxDomain::new(&[-1.0, 0.0], &[2.0, 1.5]);
        let a = build_uniform_grid(&d, &[6, 3]).unwrap();
        let b = build_uniform_grid(&d, &[12, 6]).unwrap();
        assert_relative_eq!(b.h(), a.h() / 2.0, max_relative = 1e-14);
        // interior cells only exist on the finer grid; compare two finer levels instead
        let c = build_uniform_grid(&d, &[24, 12]).unwrap();
        assert_relative_eq!(c.rho(), b.rho(), max_relative = 1e-13);
    }

    #[test]
    fn interface_symmetry() {
        let m = build_uniform_grid(&BoxDomain::unit(2), &[3, 2]).unwrap();
        for f in m.interfaces() {
            let a = m.interface_between(f.cells.0, f.cells.1).unwrap();
            let b = m.interface_between(f.cells.1, f.cells.0).unwrap();
            assert_eq!(a.normal, [-b.normal[0], -b.normal[1]]);
            assert_eq!(a.transmissibility, b.transmissibility);
        }
        assert!(m.interface_between(0, 5).is_none());
    }

    #[test]
    fn round_trip_through_text() {
        let m = two_cells();
        let text = write_mesh(&m);
        let back = parse_mesh(&text).unwrap();
        assert_eq!(back.num_cells(), 2);
        let taus: Vec<f64> = back.interfaces().iter().map(|f| f.transmissibility).collect();
        let orig: Vec<f64> = m.interfaces().iter().map(|f| f.transmissibility).collect();
        assert_eq!(taus, orig);
        assert_eq!(back.rho(), m.rho());
    }

    #[test]
    fn moved_center_breaks_orthogonality() {
        let text = "\
2 2 1
0 0.25 0.6 0.5 4 0 0 0.5 0 0.5 1 0 1
1 0.75 0.5 0.5 4 0.5 0 1 0 1 1 0.5 1
0 1 1
";
        match parse_mesh(text) {
            Err(MeshError::Orthogonality { interface, .. }) => assert_eq!(interface, 0),
            other => panic!("expected orthogonality error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_malformed_files() {
        assert!(matches!(parse_mesh("2 0 0\n"), Err(MeshError::InvalidGeometry(_))));
        assert!(matches!(parse_mesh("# nothing\n"), Err(MeshError::InvalidGeometry(_))));
        match parse_mesh("1 2 1\n0 0.25 0.5 0 0.5\n1 x 0.5 0.5 1\n0 1 1\n") {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn locate_half_open_convention() {
        let m = two_cells();
        assert_eq!(m.locate(&[0.1, 0.1]), Some(0));
        assert_eq!(m.locate(&[0.5, 0.3]), Some(1));
        assert_eq!(m.locate(&[1.0, 1.0]), Some(1));
        assert_eq!(m.locate(&[1.2, 0.5]), None);
        let loaded = parse_mesh(&write_mesh(&m)).unwrap();
        assert_eq!(loaded.locate(&[0.5, 0.3]), Some(1));
        assert_eq!(loaded.locate(&[0.1, 0.1]), Some(0));
        assert_eq!(loaded.locate(&[0.0, 0.0]), Some(0));
    }

    #[test]
    fn triangle_pair_loaded() {
        // two triangles sharing the diagonal; centers on the normal line through (0.5, 0.5)
        let text = "\
2 2 1
0 0.3 0.7 0.5 3 0 0 1 1 0 1
1 0.7 0.3 0.5 3 0 0 1 0 1 1
0 1 1.4142135623730951
";
        let m = parse_mesh(text).unwrap();
        let f = &m.interfaces()[0];
        assert_relative_eq!(f.distance, (0.32f64).sqrt(), max_relative = 1e-14);
        assert!(validate_admissible(&m).passed());
        assert_eq!(m.boundary_faces().len(), 4);
    }
}
