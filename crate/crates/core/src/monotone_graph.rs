//! Maximal monotone graphs on ℝ and their resolvents.
//!
//! A graph is handled through its resolvent `(Id + λβ)⁻¹`, which is single valued and
//! 1-Lipschitz for every maximal monotone `β` and `λ > 0`. Three representations are
//! supported:
//!
//! - the power law `ψ(u) = |u|^{q−1}u` of the porous medium equation,
//! - an arbitrary continuous nondecreasing function,
//! - a monotone polyline, which may contain vertical segments (multi-valued points such as
//!   the Stefan graph) and horizontal ones.
//!
//! The module also hosts the scalar inequalities behind the energy estimates of the scheme.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("resolvent parameter must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("could not bracket the resolvent equation at y = {y}")]
    BracketFailure { y: f64 },
    #[error("resolvent residual {residual:e} at y = {y}: the graph is not maximal monotone")]
    NotMaximal { y: f64, residual: f64 },
}

/// Power nonlinearity `ψ(u) = |u|^{q−1}u` with Kirchhoff transform
/// `φ(u) = ∫₀ᵘ √ψ′ = (2√q/(q+1)) |u|^{(q−1)/2} u`.
///
/// `q = 1` is accepted as a linear mode (`ψ = φ = Id`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    q: f64,
}

impl PowerLaw {
    pub fn new(q: f64) -> Result<Self, GraphError> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(GraphError::Invalid(format!("power-law exponent must be >= 1, got {q}")));
        }
        Ok(Self { q })
    }

    pub fn exponent(&self) -> f64 {
        self.q
    }

    pub fn is_linear(&self) -> bool {
        self.q == 1.0
    }

    #[inline]
    pub fn psi(&self, u: f64) -> f64 {
        psi(u, self.q)
    }

    #[inline]
    pub fn psi_prime(&self, u: f64) -> f64 {
        if self.q == 1.0 {
            1.0
        } else {
            self.q * u.abs().powf(self.q - 1.0)
        }
    }

    #[inline]
    pub fn phi(&self, u: f64) -> f64 {
        phi(u, self.q)
    }
}

#[inline]
pub fn psi(u: f64, q: f64) -> f64 {
    if q == 1.0 {
        u
    } else {
        u.abs().powf(q - 1.0) * u
    }
}

#[inline]
pub fn phi(u: f64, q: f64) -> f64 {
    if q == 1.0 {
        u
    } else {
        2.0 * q.sqrt() / (q + 1.0) * u.abs().powf(0.5 * (q - 1.0)) * u
    }
}

/// `(a−b)(ψ(a)−ψ(b)) − (φ(a)−φ(b))²`, nonnegative by Cauchy–Schwarz.
pub fn cs_gap(a: f64, b: f64, q: f64) -> f64 {
    (a - b) * (psi(a, q) - psi(b, q)) - (phi(a, q) - phi(b, q)).powi(2)
}

/// Magnitude against which [`cs_gap`] round-off is measured: the size of the
/// operands of each difference before cancellation.
pub fn cs_gap_scale(a: f64, b: f64, q: f64) -> f64 {
    let (pa, pb) = (phi(a, q), phi(b, q));
    let terms = (a - b).abs() * (psi(a, q).abs() + psi(b, q).abs()) + (pa - pb).abs() * (pa.abs() + pb.abs());
    terms.max(f64::MIN_POSITIVE)
}

/// `(3/2 a − 2b + c/2) a − ¼(a² + (2a−b)² − b² − (2b−c)²)`; equals `¼(a − 2b + c)²`.
pub fn bdf2_multiplier_gap(a: f64, b: f64, c: f64) -> f64 {
    (1.5 * a - 2.0 * b + 0.5 * c) * a - 0.25 * (a * a + (2.0 * a - b).powi(2) - b * b - (2.0 * b - c).powi(2))
}

/// `(a−b)a − (a²/2 − b²/2)`; equals `(a−b)²/2`.
pub fn euler_multiplier_gap(a: f64, b: f64) -> f64 {
    (a - b) * a - (0.5 * a * a - 0.5 * b * b)
}

/// Continuous piecewise-linear monotone curve through `vertices`, extended by straight
/// rays of slope `left_slope` / `right_slope`. Repeated abscissae encode vertical segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    vertices: Vec<(f64, f64)>,
    left_slope: f64,
    right_slope: f64,
}

impl Polyline {
    pub fn new(vertices: Vec<(f64, f64)>, left_slope: f64, right_slope: f64) -> Result<Self, GraphError> {
        if vertices.is_empty() {
            return Err(GraphError::Invalid("polyline needs at least one vertex".into()));
        }
        if !(left_slope >= 0.0 && right_slope >= 0.0) {
            return Err(GraphError::Invalid("end slopes must be nonnegative".into()));
        }
        for w in vertices.windows(2) {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            if !(dx >= 0.0 && dy >= 0.0) || (dx == 0.0 && dy == 0.0) {
                return Err(GraphError::Invalid(format!(
                    "polyline vertices {:?} -> {:?} are not strictly monotone",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            vertices,
            left_slope,
            right_slope,
        })
    }

    fn range_at(&self, x: f64) -> (f64, f64) {
        let v = &self.vertices;
        let (first, last) = (v[0], v[v.len() - 1]);
        if x < first.0 {
            let y = first.1 + self.left_slope * (x - first.0);
            return (y, y);
        }
        if x > last.0 {
            let y = last.1 + self.right_slope * (x - last.0);
            return (y, y);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut push = |y: f64| {
            lo = lo.min(y);
            hi = hi.max(y);
        };
        if v.len() == 1 {
            push(first.1);
        }
        for w in v.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x < x0 || x > x1 {
                continue;
            }
            if x0 == x1 {
                push(y0);
                push(y1);
            } else {
                push(y0 + (y1 - y0) * (x - x0) / (x1 - x0));
            }
        }
        (lo, hi)
    }

    /// Exact resolvent: `s = x + λy` is strictly increasing along the curve.
    fn resolvent(&self, lambda: f64, y: f64) -> f64 {
        let v = &self.vertices;
        let s = |p: (f64, f64)| p.0 + lambda * p.1;
        let (first, last) = (v[0], v[v.len() - 1]);
        if y <= s(first) {
            return (y - lambda * first.1 + lambda * self.left_slope * first.0) / (1.0 + lambda * self.left_slope);
        }
        if y >= s(last) {
            return (y - lambda * last.1 + lambda * self.right_slope * last.0) / (1.0 + lambda * self.right_slope);
        }
        let i = v.partition_point(|&p| s(p) <= y).clamp(1, v.len() - 1);
        let (p0, p1) = (v[i - 1], v[i]);
        let theta = (y - s(p0)) / (s(p1) - s(p0));
        p0.0 + theta * (p1.0 - p0.0)
    }
}

/// Settings of the bracketed scalar solver used by the resolvent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventSettings {
    pub bracket_expansion: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ResolventSettings {
    fn default() -> Self {
        Self {
            bracket_expansion: 2.0,
            tolerance: 1e-14,
            max_iterations: 300,
        }
    }
}

#[derive(Clone)]
pub enum GraphKind {
    Power(PowerLaw),
    /// Continuous nondecreasing single-valued function.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Polyline(Polyline),
}

impl fmt::Debug for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Power(p) => write!(f, "Power({})", p.q),
            GraphKind::Function(_) => write!(f, "Function(..)"),
            GraphKind::Polyline(p) => write!(f, "Polyline({:?})", p.vertices),
        }
    }
}

/// A maximal monotone graph `β ⊂ ℝ²`.
#[derive(Debug, Clone)]
pub struct MonotoneGraph {
    kind: GraphKind,
    pub settings: ResolventSettings,
}

impl MonotoneGraph {
    pub fn power(law: PowerLaw) -> Self {
        Self::from_kind(GraphKind::Power(law))
    }

    pub fn identity() -> Self {
        Self::power(PowerLaw { q: 1.0 })
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::from_kind(GraphKind::Function(Arc::new(f)))
    }

    pub fn polyline(p: Polyline) -> Self {
        Self::from_kind(GraphKind::Polyline(p))
    }

    /// Stefan-type graph: slope `left` below `at`, a vertical jump of height `jump` at
    /// `at`, slope `right` above.
    pub fn stefan(at: f64, jump: f64, left: f64, right: f64) -> Result<Self, GraphError> {
        Ok(Self::polyline(Polyline::new(vec![(at, 0.0), (at, jump)], left, right)?))
    }

    fn from_kind(kind: GraphKind) -> Self {
        Self {
            kind,
            settings: ResolventSettings::default(),
        }
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    /// `β(x)` as a closed interval `[lo, hi]` (degenerate for single-valued points).
    pub fn range_at(&self, x: f64) -> (f64, f64) {
        match &self.kind {
            GraphKind::Power(p) => {
                let y = p.psi(x);
                (y, y)
            }
            GraphKind::Function(f) => {
                let y = f(x);
                (y, y)
            }
            GraphKind::Polyline(p) => p.range_at(x),
        }
    }

    /// Whether `y ∈ β(x)` up to an absolute tolerance.
    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        let (lo, hi) = self.range_at(x);
        y >= lo - tol && y <= hi + tol
    }

    /// The unique `u` with `y ∈ u + λβ(u)`.
    pub fn resolvent(&self, lambda: f64, y: f64) -> Result<f64, GraphError> {
        if !(lambda > 0.0) {
            return Err(GraphError::NonPositiveLambda(lambda));
        }
        match &self.kind {
            GraphKind::Polyline(p) => Ok(p.resolvent(lambda, y)),
            GraphKind::Power(p) => Ok(power_resolvent(*p, lambda, y, &self.settings)),
            GraphKind::Function(f) => function_resolvent(f.as_ref(), lambda, y, &self.settings),
        }
    }

    /// Splits `w = a + b` with `b = (Id+β)⁻¹ w` and `a = w − b ∈ β(b)`.
    pub fn decompose_ab(&self, w: f64) -> Result<(f64, f64), GraphError> {
        let b = self.resolvent(1.0, w)?;
        Ok((w - b, b))
    }
}

/// Newton on `g(u) = u + λψ(u) − y` safeguarded by the bracket `[−|y|, |y|]`.
fn power_resolvent(p: PowerLaw, lambda: f64, y: f64, s: &ResolventSettings) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if p.is_linear() {
        return y / (1.0 + lambda);
    }
    let g = |u: f64| u + lambda * p.psi(u) - y;
    let (mut lo, mut hi) = (-y.abs(), y.abs());
    let mut u = if y > 0.0 { 0.5 * hi } else { 0.5 * lo };
    for _ in 0..s.max_iterations {
        let gu = g(u);
        if gu == 0.0 {
            return u;
        }
        if gu < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - gu / (1.0 + lambda * p.psi_prime(u));
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - u).abs() <= s.tolerance * next.abs().max(1.0) || hi - lo <= s.tolerance * hi.abs().max(1.0);
        u = next;
        if done {
            break;
        }
    }
    u
}

/// Illinois (modified regula falsi) on a bracket obtained by geometric expansion.
fn function_resolvent(
    f: &(dyn Fn(f64) -> f64 + Send + Sync),
    lambda: f64,
    y: f64,
    s: &ResolventSettings,
) -> Result<f64, GraphError> {
    let g = |u: f64| u + lambda * f(u) - y;
    let mut width = y.abs().max(1.0);
    let (mut lo, mut hi) = (y - width, y + width);
    let (mut glo, mut ghi) = (g(lo), g(hi));
    let mut expansions = 0;
    while !(glo <= 0.0 && ghi >= 0.0) {
        expansions += 1;
        if expansions > 200 || !glo.is_finite() || !ghi.is_finite() {
            return Err(GraphError::BracketFailure { y });
        }
        width *= s.bracket_expansion;
        if glo > 0.0 {
            lo = y - width;
            glo = g(lo);
        }
        if ghi < 0.0 {
            hi = y + width;
            ghi = g(hi);
        }
    }
    let mut side = 0i8;
    let mut u = lo;
    for _ in 0..s.max_iterations {
        if hi - lo <= s.tolerance * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
        u = if ghi != glo {
            (lo * ghi - hi * glo) / (ghi - glo)
        } else {
            0.5 * (lo + hi)
        };
        if !(u > lo && u < hi) {
            u = 0.5 * (lo + hi);
        }
        let gu = g(u);
        if gu == 0.0 {
            return Ok(u);
        }
        if gu < 0.0 {
            lo = u;
            glo = gu;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = u;
            ghi = gu;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    let u = if hi - lo <= s.tolerance * lo.abs().max(hi.abs()).max(1.0) {
        0.5 * (lo + hi)
    } else {
        u
    };
    let residual = g(u).abs();
    if residual > s.tolerance.sqrt() * y.abs().max(1.0) {
        return Err(GraphError::NotMaximal { y, residual });
    }
    Ok(u)
}
