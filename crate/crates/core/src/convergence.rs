//! Reference solutions, refinement studies and compactness diagnostics.
//!
//! Errors are measured against an exact solution by per-cell Gauss quadrature at the
//! discrete times `t_k`, so the numerical value on `(t_{k−1}, t_k]` is compared with the
//! reference at the right end of the step. Observed orders are empirical.

use std::f64::consts::PI;
use web_time::Instant;

use rayon::prelude::*;
use statrs::function::beta::beta;
use thiserror::Error;

use crate::discrete_ops::{self, fmt_real, CellVector, DiscreteError, SpaceTimeField};
use crate::mesh::{build_uniform_grid, AdmissibleMesh, BoxDomain, MeshError, Point};
use crate::monotone_graph::PowerLaw;
use crate::quadrature;
use crate::solver::{self, weak_form_residual, RunReport, SolverConfig, SolverError, WeakForm};
use crate::time_algebra::{MultistepOperator, TimeError, TimeGrid};

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error("invalid reference: {0}")]
    InvalidReference(String),
    #[error("reference support leaves the domain: radius {radius} exceeds {room} at t = {time}")]
    Certificate { radius: f64, room: f64, time: f64 },
    #[error("a study needs at least {min} levels, got {got}")]
    TooFewLevels { min: usize, got: usize },
    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    /// Self-similar source solution of the porous medium equation, shifted in time by
    /// `t0` and normalized to unit mass.
    Barenblatt {
        q: f64,
        dim: usize,
        t0: f64,
        center: Point,
        c: f64,
        alpha: f64,
        beta: f64,
        kappa: f64,
    },
    /// `a + b Π_i cos(k_i π (x_i − lo_i)/L_i) e^{−λt}` for the heat equation (`q = 1`)
    /// with zero-flux walls on a box.
    HeatCosine {
        dim: usize,
        a: f64,
        b: f64,
        lo: Point,
        wave: Point,
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSolution {
    pub kind: ReferenceKind,
}

/// Barenblatt exponents `(α, β, κ)`.
pub fn barenblatt_exponents(q: f64, d: usize) -> (f64, f64, f64) {
    let d = d as f64;
    let alpha = d / (d * (q - 1.0) + 2.0);
    let beta = alpha / d;
    let kappa = alpha * (q - 1.0) / (2.0 * d * q);
    (alpha, beta, kappa)
}

impl ReferenceSolution {
    /// Unit-mass Barenblatt profile centred at `center`, evaluated at `t + t0`.
    pub fn barenblatt(q: f64, dim: usize, t0: f64, center: Point) -> Result<Self, ConvergenceError> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(ConvergenceError::InvalidReference(format!("q must exceed 1, got {q}")));
        }
        if !(t0 > 0.0) {
            return Err(ConvergenceError::InvalidReference(format!(
                "t0 must be positive, got {t0}"
            )));
        }
        let (alpha, beta_, kappa) = barenblatt_exponents(q, dim);
        let p = 1.0 / (q - 1.0);
        let c = match dim {
            1 => (kappa.sqrt() / beta(0.5, p + 1.0)).powf(1.0 / (p + 0.5)),
            2 => (kappa * (p + 1.0) / PI).powf(1.0 / (p + 1.0)),
            _ => return Err(ConvergenceError::InvalidReference(format!("dimension {dim}"))),
        };
        Ok(Self {
            kind: ReferenceKind::Barenblatt {
                q,
                dim,
                t0,
                center,
                c,
                alpha,
                beta: beta_,
                kappa,
            },
        })
    }

    /// Separable heat solution on `domain` with wave numbers `modes` (one per axis).
    pub fn heat_cosine(domain: &BoxDomain, a: f64, b: f64, modes: &[u32]) -> Result<Self, ConvergenceError> {
        let dim = domain.dim();
        if modes.len() != dim {
            return Err(ConvergenceError::InvalidReference("one mode per axis required".into()));
        }
        let mut lo = [0.0; 2];
        let mut wave = [0.0; 2];
        let mut lambda = 0.0;
        for ax in 0..dim {
            lo[ax] = domain.lo[ax];
            wave[ax] = modes[ax] as f64 * PI / (domain.hi[ax] - domain.lo[ax]);
            lambda += wave[ax] * wave[ax];
        }
        Ok(Self {
            kind: ReferenceKind::HeatCosine {
                dim,
                a,
                b,
                lo,
                wave,
                lambda,
            },
        })
    }

    /// Exponent `q` the reference solves the equation for.
    pub fn q(&self) -> f64 {
        match self.kind {
            ReferenceKind::Barenblatt { q, .. } => q,
            ReferenceKind::HeatCosine { .. } => 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ReferenceKind::Barenblatt { dim, .. } | ReferenceKind::HeatCosine { dim, .. } => dim,
        }
    }

    pub fn eval(&self, p: Point, t: f64) -> f64 {
        match self.kind {
            ReferenceKind::Barenblatt {
                q,
                dim,
                t0,
                center,
                c,
                alpha,
                beta,
                kappa,
            } => {
                let s = t + t0;
                let r2: f64 = (0..dim).map(|ax| (p[ax] - center[ax]).powi(2)).sum();
                let base = c - kappa * r2 * s.powf(-2.0 * beta);
                if base <= 0.0 {
                    0.0
                } else {
                    s.powf(-alpha) * base.powf(1.0 / (q - 1.0))
                }
            }
            ReferenceKind::HeatCosine {
                dim,
                a,
                b,
                lo,
                wave,
                lambda,
            } => {
                let prod: f64 = (0..dim).map(|ax| (wave[ax] * (p[ax] - lo[ax])).cos()).product();
                a + b * prod * (-lambda * t).exp()
            }
        }
    }

    /// Radius of the support at time `t` (infinite for the heat reference).
    pub fn support_radius(&self, t: f64) -> f64 {
        match self.kind {
            ReferenceKind::Barenblatt { t0, c, beta, kappa, .. } => (c / kappa).sqrt() * (t + t0).powf(beta),
            ReferenceKind::HeatCosine { .. } => f64::INFINITY,
        }
    }

    /// Checks that the support stays inside `domain` up to `horizon`, so the zero-flux
    /// problem on the domain has the same solution.
    pub fn certificate(&self, domain: &BoxDomain, horizon: f64) -> Result<(), ConvergenceError> {
        if let ReferenceKind::Barenblatt { center, dim, .. } = self.kind {
            if dim != domain.dim() {
                return Err(ConvergenceError::InvalidReference("dimension mismatch".into()));
            }
            let room = (0..dim)
                .map(|ax| (center[ax] - domain.lo[ax]).min(domain.hi[ax] - center[ax]))
                .fold(f64::INFINITY, f64::min);
            let radius = self.support_radius(horizon);
            if radius >= room {
                return Err(ConvergenceError::Certificate {
                    radius,
                    room,
                    time: horizon,
                });
            }
        }
        Ok(())
    }

    /// `∂_t u − Δψ(u)` by central differences with step `h`, and the magnitude of the two
    /// terms for relative comparisons.
    pub fn pde_residual(&self, p: Point, t: f64, h: f64) -> (f64, f64) {
        let q = self.q();
        let psi = |p: Point| crate::monotone_graph::psi(self.eval(p, t), q);
        let dt = (self.eval(p, t + h) - self.eval(p, t - h)) / (2.0 * h);
        let mut lap = 0.0;
        for ax in 0..self.dim() {
            let (mut a, mut b) = (p, p);
            a[ax] += h;
            b[ax] -= h;
            lap += (psi(a) - 2.0 * psi(p) + psi(b)) / (h * h);
        }
        (dt - lap, dt.abs() + lap.abs())
    }
}

/// Error norms of a trajectory against a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorNorms {
    /// `(Σ_k Δt_k ∫ (π u^k − u(t_k))²)^{1/2}`.
    pub l2: f64,
    pub l1: f64,
    /// `max_k ‖π u^k − u(t_k)‖_{L²}` over `k = 0..=n`.
    pub linf_l2: f64,
    /// `(Σ_k Δt_k Σ_K m_K (u_K^k − ū_K(t_k))²)^{1/2}` against cell averages `ū_K`.
    pub l2_projected: f64,
}

pub fn error_norms(
    mesh: &AdmissibleMesh,
    grid: &TimeGrid,
    field: &SpaceTimeField,
    reference: &ReferenceSolution,
) -> ErrorNorms {
    let rules: Vec<Vec<(Point, f64)>> = mesh.cells().iter().map(|c| quadrature::cell_rule(&c.shape)).collect();
    let level = |k: usize| {
        let t = grid.time(k);
        let u = field.slot(k);
        let (mut sq, mut abs, mut proj) = (0.0, 0.0, 0.0);
        for (c, rule) in rules.iter().enumerate() {
            let mut avg = 0.0;
            for (p, w) in rule {
                let r = reference.eval(*p, t);
                sq += w * (u[c] - r).powi(2);
                abs += w * (u[c] - r).abs();
                avg += w * r;
            }
            let m = mesh.cell(c).measure;
            proj += m * (u[c] - avg / m).powi(2);
        }
        (sq, abs, proj)
    };
    let mut out = ErrorNorms {
        linf_l2: level(0).0.sqrt(),
        ..ErrorNorms::default()
    };
    let (mut l2, mut proj) = (0.0, 0.0);
    for k in 1..=grid.steps() {
        let dt = grid.dt(k);
        let (sq, abs, pr) = level(k);
        l2 += dt * sq;
        out.l1 += dt * abs;
        proj += dt * pr;
        out.linf_l2 = out.linf_l2.max(sq.sqrt());
    }
    out.l2 = l2.sqrt();
    out.l2_projected = proj.sqrt();
    out
}

/// How the number of steps follows the mesh size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `Δt ∝ h`.
    Linear,
    /// `Δt ∝ h²`.
    Quadratic,
}

impl std::str::FromStr for Coupling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "h" => Ok(Coupling::Linear),
            "h2" => Ok(Coupling::Quadratic),
            other => Err(format!("unknown coupling '{other}' (expected h or h2)")),
        }
    }
}

/// A sequence of uniform grids obtained by halving the mesh size.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub domain: BoxDomain,
    pub base_counts: Vec<usize>,
    pub base_steps: usize,
    pub horizon: f64,
    pub levels: usize,
    pub coupling: Coupling,
}

impl StudySpec {
    pub fn counts(&self, level: usize) -> Vec<usize> {
        self.base_counts.iter().map(|c| c << level).collect()
    }

    pub fn steps(&self, level: usize) -> usize {
        match self.coupling {
            Coupling::Linear => self.base_steps << level,
            Coupling::Quadratic => self.base_steps << (2 * level),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub cells: usize,
    pub h: f64,
    pub dt: f64,
    pub errors: ErrorNorms,
    /// Observed order of the `L²(Q_T)` error with respect to the previous row.
    pub order_l2: Option<f64>,
    pub order_projected: Option<f64>,
    pub runtime: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// `level,cells,h,dt,l2_error,l1_error,linf_l2_error,l2_projected_error,order_l2,order_projected,runtime_s`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), DiscreteError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "level",
            "cells",
            "h",
            "dt",
            "l2_error",
            "l1_error",
            "linf_l2_error",
            "l2_projected_error",
            "order_l2",
            "order_projected",
            "runtime_s",
        ])?;
        let opt = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.level.to_string(),
                r.cells.to_string(),
                fmt_real(r.h),
                fmt_real(r.dt),
                fmt_real(r.errors.l2),
                fmt_real(r.errors.l1),
                fmt_real(r.errors.linf_l2),
                fmt_real(r.errors.l2_projected),
                opt(r.order_l2),
                opt(r.order_projected),
                format!("{:.3}", r.runtime),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn l2_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.errors.l2).collect()
    }
}

/// One completed level of a study.
pub struct LevelRun {
    pub mesh: AdmissibleMesh,
    pub grid: TimeGrid,
    pub field: SpaceTimeField,
    pub report: RunReport,
    pub runtime: f64,
}

/// Runs the scheme on every level of `spec`, in parallel, from the projection of the
/// reference at `t = 0`.
pub fn run_levels(
    spec: &StudySpec,
    reference: &ReferenceSolution,
    config: &SolverConfig,
) -> Result<Vec<LevelRun>, ConvergenceError> {
    reference.certificate(&spec.domain, spec.horizon)?;
    (0..spec.levels)
        .into_par_iter()
        .map(|level| {
            let start = Instant::now();
            let mesh = build_uniform_grid(&spec.domain, &spec.counts(level))?;
            let grid = TimeGrid::uniform(spec.steps(level), spec.horizon)?;
            let u0 = solver::discretize_initial(&mesh, |p| reference.eval(p, 0.0));
            let (field, report) =
                solver::run(&mesh, &grid, &u0, config).map_err(|source| ConvergenceError::Level { level, source })?;
            Ok(LevelRun {
                mesh,
                grid,
                field,
                report,
                runtime: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn order(prev: f64, cur: f64, h_prev: f64, h_cur: f64) -> Option<f64> {
    (prev > 0.0 && cur > 0.0).then(|| (prev / cur).ln() / (h_prev / h_cur).ln())
}

/// Refinement study against an exact reference; needs at least three levels.
pub fn refinement_study(
    spec: &StudySpec,
    reference: &ReferenceSolution,
    config: &SolverConfig,
) -> Result<(ConvergenceTable, Vec<LevelRun>), ConvergenceError> {
    refinement_study_min(spec, reference, config, 3)
}

/// As [`refinement_study`] with a caller-chosen minimum number of levels.
pub fn refinement_study_min(
    spec: &StudySpec,
    reference: &ReferenceSolution,
    config: &SolverConfig,
    min_levels: usize,
) -> Result<(ConvergenceTable, Vec<LevelRun>), ConvergenceError> {
    if spec.levels < min_levels {
        return Err(ConvergenceError::TooFewLevels {
            min: min_levels,
            got: spec.levels,
        });
    }
    let runs = run_levels(spec, reference, config)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(runs.len());
    for (level, r) in runs.iter().enumerate() {
        let errors = error_norms(&r.mesh, &r.grid, &r.field, reference);
        let (order_l2, order_projected) = match rows.last() {
            Some(p) => (
                order(p.errors.l2, errors.l2, p.h, r.mesh.h()),
                order(p.errors.l2_projected, errors.l2_projected, p.h, r.mesh.h()),
            ),
            None => (None, None),
        };
        rows.push(ConvergenceRow {
            level,
            cells: r.mesh.num_cells(),
            h: r.mesh.h(),
            dt: r.grid.max_dt(),
            errors,
            order_l2,
            order_projected,
            runtime: r.runtime,
            report: r.report.clone(),
        });
    }
    Ok((ConvergenceTable { rows }, runs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalRow {
    pub steps: usize,
    pub dt: f64,
    /// Discrete `L²(Q_T)` distance to the reference trajectory at the coarse times.
    pub error: f64,
    pub order: Option<f64>,
}

/// Time-refinement study on a fixed mesh against a self-computed reference trajectory
/// with `base_steps · 2^halvings · ref_factor` steps.
pub fn temporal_study(
    mesh: &AdmissibleMesh,
    u0: &CellVector,
    horizon: f64,
    base_steps: usize,
    halvings: usize,
    ref_factor: usize,
    config: &SolverConfig,
) -> Result<Vec<TemporalRow>, ConvergenceError> {
    let fine_steps = base_steps << halvings;
    let ref_steps = base_steps * ref_factor;
    if ref_steps % fine_steps != 0 || ref_steps <= fine_steps {
        return Err(ConvergenceError::InvalidReference(format!(
            "reference with {ref_steps} steps must refine {fine_steps} steps"
        )));
    }
    let ref_grid = TimeGrid::uniform(ref_steps, horizon)?;
    let (reference, _) = solver::run(mesh, &ref_grid, u0, config)?;
    let runs: Vec<Result<(usize, SpaceTimeField), ConvergenceError>> = (0..=halvings)
        .into_par_iter()
        .map(|j| {
            let n = base_steps << j;
            let grid = TimeGrid::uniform(n, horizon)?;
            Ok((n, solver::run(mesh, &grid, u0, config)?.0))
        })
        .collect();
    let mut rows: Vec<TemporalRow> = Vec::new();
    for r in runs {
        let (n, field) = r?;
        let stride = ref_steps / n;
        let dt = horizon / n as f64;
        let mut sq = 0.0;
        for k in 1..=n {
            let diff: Vec<f64> = field
                .slot(k)
                .iter()
                .zip(reference.slot(k * stride))
                .map(|(a, b)| a - b)
                .collect();
            sq += dt * discrete_ops::l2_norm_squared(mesh, &diff);
        }
        let error = sq.sqrt();
        let order = rows.last().and_then(|p| order(p.error, error, p.dt, dt));
        rows.push(TemporalRow {
            steps: n,
            dt,
            error,
            order,
        });
    }
    Ok(rows)
}

/// Fixed space-time test function: a polynomial of degree ≤ 3 times a polynomial bump
/// vanishing on `∂Ω`, times a polynomial in `t` vanishing at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub index: usize,
    domain: BoxDomain,
    horizon: f64,
    space: [f64; 4],
    time: usize,
}

impl TestFunction {
    pub fn eval(&self, p: Point, t: f64) -> f64 {
        let d = self.domain.dim();
        let mut bump = 1.0;
        let mut xi = [0.0; 2];
        for ax in 0..d {
            let s = (p[ax] - self.domain.lo[ax]) / (self.domain.hi[ax] - self.domain.lo[ax]);
            xi[ax] = s;
            bump *= (s * (1.0 - s)).max(0.0).powi(2) * 16.0;
        }
        let (x, y) = (xi[0], xi[1]);
        let [c0, c1, c2, c3] = self.space;
        let poly = c0 + c1 * (x - 0.5) + c2 * (x - 0.5) * (y - 0.5) * 4.0 + c3 * (x - 0.3).powi(3) * 8.0;
        let tau = (t / self.horizon).clamp(0.0, 1.0);
        let time = match self.time {
            0 => (1.0 - tau).powi(2),
            _ => (1.0 - tau) * (1.0 + 2.0 * tau),
        };
        poly * bump * time
    }
}

/// The battery of 12 test functions on `domain × [0, horizon]`.
pub fn test_battery(domain: &BoxDomain, horizon: f64) -> Vec<TestFunction> {
    const SPACE: [[f64; 4]; 6] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.5, -1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 2.0, 0.0, -1.0],
        [-0.3, 0.5, 2.0, 0.7],
    ];
    let mut out = Vec::with_capacity(12);
    for time in 0..2 {
        for space in SPACE {
            out.push(TestFunction {
                index: out.len(),
                domain: domain.clone(),
                horizon,
                space,
                time,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactnessReport {
    /// `max_φ |∬ δ̂u π Pφ| / ‖∇ Pφ‖_∞` over the battery.
    pub dual_ratio: f64,
    pub flux_l1: f64,
    /// `(1/d) ‖∇ψ(u)‖_{L¹}`, the bound for `dual_ratio`.
    pub dual_bound: f64,
    /// `max_φ |𝒜 + ℬ + 𝒞| / scale` over the battery.
    pub weak_form_worst: f64,
    pub weak_forms: Vec<WeakForm>,
    /// `(|ζ|, translate ratio of the final state)` along the first axis.
    pub translates: Vec<(f64, f64)>,
}

/// Compactness diagnostics of one trajectory.
pub fn compactness_probe(
    mesh: &AdmissibleMesh,
    grid: &TimeGrid,
    field: &SpaceTimeField,
    law: PowerLaw,
    battery: &[TestFunction],
    shifts: &[f64],
) -> Result<CompactnessReport, ConvergenceError> {
    let op = MultistepOperator::build_bdf2_uniform(grid)?;
    let flux_l1 = solver::flux_l1_norm(mesh, grid, field, law);
    let mut dual_ratio: f64 = 0.0;
    let mut worst: f64 = 0.0;
    let mut weak_forms = Vec::with_capacity(battery.len());
    for phi in battery {
        let w = weak_form_residual(mesh, &op, field, law, |p, t| phi.eval(p, t))?;
        if w.grad_p_phi_inf > 0.0 {
            dual_ratio = dual_ratio.max(w.dual_pairing / w.grad_p_phi_inf);
        }
        if w.scale > 0.0 {
            worst = worst.max(w.total.abs() / w.scale);
        }
        weak_forms.push(w);
    }
    let last = field.cell_vector(field.num_slots() - 1);
    let mut translates = Vec::with_capacity(shifts.len());
    for &s in shifts {
        let r = match discrete_ops::translate_estimate_probe(mesh, &last, [s, 0.0]) {
            Ok(r) => r,
            Err(DiscreteError::ZeroVector) => 0.0,
            Err(e) => return Err(e.into()),
        };
        translates.push((s, r));
    }
    Ok(CompactnessReport {
        dual_ratio,
        flux_l1,
        dual_bound: flux_l1 / mesh.dim() as f64,
        weak_form_worst: worst,
        weak_forms,
        translates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponents_for_q2_in_1d() {
        let (a, b, k) = barenblatt_exponents(2.0, 1);
        assert_relative_eq!(a, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(b, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(k, 1.0 / 12.0, max_relative = 1e-15);
    }

    fn mass_1d(r: &ReferenceSolution, t: f64) -> f64 {
        // x = R sin θ removes the edge singularity of (C − κx²)^{1/(q−1)}
        let rad = r.support_radius(t);
        let n = 4000;
        let h = PI / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let th = -0.5 * PI + i as f64 * h;
                w * r.eval([rad * th.sin(), 0.0], t) * rad * th.cos()
            })
            .sum::<f64>()
            * h
            / 3.0
    }

    #[test]
    fn barenblatt_has_unit_mass() {
        for q in [1.5, 2.0, 3.0] {
            let r = ReferenceSolution::barenblatt(q, 1, 1.0, [0.0, 0.0]).unwrap();
            for t in [0.0, 0.5, 2.0] {
                assert!((mass_1d(&r, t) - 1.0).abs() < 1e-6, "q={q} t={t}");
            }
        }
        let r = ReferenceSolution::barenblatt(2.0, 2, 0.5, [0.0, 0.0]).unwrap();
        let rad = r.support_radius(0.3);
        let n = 400;
        let h = 2.0 * rad / n as f64;
        let mut m = 0.0;
        for j in 0..n {
            for i in 0..n {
                let p = [-rad + (i as f64 + 0.5) * h, -rad + (j as f64 + 0.5) * h];
                m += h * h * r.eval(p, 0.3);
            }
        }
        assert!((m - 1.0).abs() < 1e-4);
    }

    #[test]
    fn barenblatt_solves_the_equation_inside_the_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (q, d) in [(2.0, 1), (3.0, 1), (2.0, 2)] {
            let r = ReferenceSolution::barenblatt(q, d, 1.0, [0.0, 0.0]).unwrap();
            let mut checked = 0;
            while checked < 100 {
                let t = rng.gen_range(0.1..1.0);
                let rad = r.support_radius(t);
                let p = [
                    rng.gen_range(-rad..rad),
                    if d == 2 { rng.gen_range(-rad..rad) } else { 0.0 },
                ];
                let dist = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if dist > 0.9 * rad {
                    continue;
                }
                let (res, scale) = r.pde_residual(p, t, 1e-4);
                assert!(res.abs() <= 1e-4 * scale.max(1e-3), "q={q} d={d} p={p:?} t={t}");
                checked += 1;
            }
        }
    }

    #[test]
    fn certificate_detects_escape() {
        let r = ReferenceSolution::barenblatt(2.0, 1, 1.0, [0.0, 0.0]).unwrap();
        let dom = BoxDomain::new(&[-3.0], &[3.0]);
        r.certificate(&dom, 1.0).unwrap();
        assert!(matches!(
            r.certificate(&dom, 3.0),
            Err(ConvergenceError::Certificate { .. })
        ));
        assert!(ReferenceSolution::barenblatt(1.0, 1, 1.0, [0.0, 0.0]).is_err());
        assert!(ReferenceSolution::barenblatt(2.0, 1, 0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn heat_reference_solves_heat_equation() {
        let dom = BoxDomain::new(&[0.0, 0.0], &[2.0, 1.0]);
        let r = ReferenceSolution::heat_cosine(&dom, 1.0, 0.5, &[1, 2]).unwrap();
        let (res, scale) = r.pde_residual([0.3, 0.7], 0.05, 1e-4);
        assert!(res.abs() < 1e-5 * scale);
    }

    #[test]
    fn zero_error_for_exact_constants() {
        let dom = BoxDomain::unit(1);
        let r = ReferenceSolution::heat_cosine(&dom, 2.0, 0.0, &[1]).unwrap();
        let mesh = build_uniform_grid(&dom, &[8]).unwrap();
        let grid = TimeGrid::uniform(4, 0.1).unwrap();
        let field = SpaceTimeField::from_slots(vec![vec![2.0; 8]; 5]).unwrap();
        assert_eq!(error_norms(&mesh, &grid, &field, &r), ErrorNorms::default());
    }

    #[test]
    fn battery_vanishes_on_boundary_and_at_horizon() {
        let dom = BoxDomain::new(&[-1.0, 0.0], &[1.0, 2.0]);
        let b = test_battery(&dom, 0.5);
        assert_eq!(b.len(), 12);
        for f in &b {
            assert_eq!(f.eval([-1.0, 0.7], 0.1), 0.0);
            assert_eq!(f.eval([0.2, 2.0], 0.1), 0.0);
            assert_eq!(f.eval([0.2, 0.7], 0.5), 0.0);
        }
        assert!(b
            .iter()
            .all(|f| f.eval([0.1, 0.9], 0.0).abs() > 0.0 || f.index == 1 || f.index == 7));
    }

    #[test]
    fn compactness_probe_on_zero_field() {
        let dom = BoxDomain::unit(1);
        let mesh = build_uniform_grid(&dom, &[10]).unwrap();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let field = SpaceTimeField::zeros(5, 10);
        let law = PowerLaw::new(2.0).unwrap();
        let rep = compactness_probe(&mesh, &grid, &field, law, &test_battery(&dom, 1.0), &[0.1, 0.2]).unwrap();
        assert_eq!(rep.dual_ratio, 0.0);
        assert_eq!(rep.flux_l1, 0.0);
        assert_eq!(rep.weak_form_worst, 0.0);
        assert!(rep.translates.iter().all(|(_, r)| *r == 0.0));
    }

    #[test]
    fn linear_mode_errors_decrease() {
        let dom = BoxDomain::unit(1);
        let r = ReferenceSolution::heat_cosine(&dom, 1.0, 1.0, &[1]).unwrap();
        let spec = StudySpec {
            domain: dom,
            base_counts: vec![8],
            base_steps: 4,
            horizon: 0.1,
            levels: 3,
            coupling: Coupling::Quadratic,
        };
        let (table, _) = refinement_study(&spec, &r, &SolverConfig::with_q(1.0)).unwrap();
        let e = table.l2_errors();
        assert!(e[0] > e[1] && e[1] > e[2]);
        assert!(table.rows[2].order_projected.unwrap() >= 1.8);
        let two = StudySpec { levels: 2, ..spec };
        assert!(matches!(
            refinement_study(&two, &r, &SolverConfig::with_q(1.0)),
            Err(ConvergenceError::TooFewLevels { .. })
        ));
    }
}
