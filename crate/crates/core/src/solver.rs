//! Fully discrete scheme for `∂_t u − Δψ(u) = 0` with zero-flux boundary conditions.
//!
//! The first step is implicit Euler and every later step is BDF2:
//!
//! ```text
//! (u_K¹ − u_K⁰) m_K/Δt                      + Σ_L τ_KL (ψ(u_K¹) − ψ(u_L¹)) = 0
//! (3/2 u_K^k − 2u_K^{k−1} + ½u_K^{k−2}) m_K/Δt + Σ_L τ_KL (ψ(u_K^k) − ψ(u_L^k)) = 0
//! ```
//!
//! Each step is solved by damped Newton. The Jacobian `c m/Δt I + L diag(ψ′(u))`, with
//! `L` the transmissibility Laplacian, has column sums `c m_K/Δt`, so every Newton update
//! preserves the discrete mass exactly up to round-off. When Newton stalls, a nonlinear
//! Gauss–Seidel sweep built on the scalar resolvent of `ψ` takes over.

use web_time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::discrete_ops::{self, fmt_real, CellVector, DiscreteError, SpaceTimeField};
use crate::linalg::{bicgstab, BandedMatrix, CsrMatrix};
use crate::mesh::{AdmissibleMesh, Point};
use crate::monotone_graph::{GraphError, MonotoneGraph, PowerLaw};
use crate::time_algebra::{MultistepOperator, TimeError, TimeGrid};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("the scheme requires a uniform time grid (step spread {0:e})")]
    NonUniformGrid(f64),
    #[error("nonlinear solve failed at step {step}: scaled residual {residual:e} after {newton_iterations} Newton iterations and {fallback_sweeps} fallback sweeps")]
    Diverged {
        step: usize,
        residual: f64,
        newton_iterations: usize,
        fallback_sweeps: usize,
    },
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Linear solver used inside Newton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    /// Banded LU when the band is narrow enough, BiCGSTAB otherwise.
    Auto,
    Direct,
    Krylov,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub q: f64,
    /// Bound on `‖F(u)‖_∞ / max_K(m_K/Δt)`.
    pub tolerance: f64,
    pub max_newton_iterations: usize,
    /// Step halvings allowed per Newton iteration before declaring a stall.
    pub max_halvings: usize,
    pub linear_solver: LinearSolver,
    pub newton: bool,
    /// Fall back to nonlinear Gauss–Seidel when Newton stalls.
    pub fallback: bool,
    pub max_fallback_sweeps: usize,
    /// Perturbs the Newton starting guess; the converged solution does not depend on it.
    pub seed: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            q: 2.0,
            tolerance: 1e-11,
            max_newton_iterations: 50,
            max_halvings: 30,
            linear_solver: LinearSolver::Auto,
            newton: true,
            fallback: true,
            max_fallback_sweeps: 200_000,
            seed: None,
        }
    }
}

impl SolverConfig {
    pub fn with_q(q: f64) -> Self {
        Self { q, ..Self::default() }
    }

    pub fn validate(&self) -> Result<PowerLaw, SolverError> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(SolverError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !self.newton && !self.fallback {
            return Err(SolverError::InvalidConfig(
                "both Newton and the fallback are disabled".into(),
            ));
        }
        PowerLaw::new(self.q).map_err(|e| SolverError::InvalidConfig(e.to_string()))
    }
}

/// Iteration counts of one time step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub fallback_sweeps: usize,
    pub residual: f64,
}

/// The time-step equations `c m_K/Δt u_K − m_K/Δt h_K + Σ_L τ_KL (ψ(u_K) − ψ(u_L)) = 0`.
struct StepSystem<'a> {
    mesh: &'a AdmissibleMesh,
    law: PowerLaw,
    coef: f64,
    dt: f64,
    history: Vec<f64>,
    scale: f64,
}

impl<'a> StepSystem<'a> {
    fn new(mesh: &'a AdmissibleMesh, law: PowerLaw, coef: f64, dt: f64, history: Vec<f64>) -> Self {
        let scale = mesh.cells().iter().map(|c| c.measure / dt).fold(0.0, f64::max);
        Self {
            mesh,
            law,
            coef,
            dt,
            history,
            scale,
        }
    }

    fn residual(&self, u: &[f64], out: &mut [f64]) {
        for (k, c) in self.mesh.cells().iter().enumerate() {
            out[k] = c.measure * (self.coef * u[k] - self.history[k]) / self.dt;
        }
        let psi: Vec<f64> = u.iter().map(|&x| self.law.psi(x)).collect();
        for s in self.mesh.interfaces() {
            let (k, l) = s.cells;
            let f = s.transmissibility * (psi[k] - psi[l]);
            out[k] += f;
            out[l] -= f;
        }
    }

    fn scaled_norm(&self, f: &[f64]) -> f64 {
        f.iter().map(|v| v.abs()).fold(0.0, f64::max) / self.scale
    }

    fn diag(&self, k: usize) -> f64 {
        self.coef * self.mesh.cell(k).measure / self.dt
    }

    fn jacobian_banded(&self, u: &[f64], band: &mut BandedMatrix) {
        band.reset();
        for k in 0..u.len() {
            band.add(k, k, self.diag(k));
        }
        for s in self.mesh.interfaces() {
            let (k, l) = s.cells;
            let (dk, dl) = (self.law.psi_prime(u[k]), self.law.psi_prime(u[l]));
            band.add(k, k, s.transmissibility * dk);
            band.add(k, l, -s.transmissibility * dl);
            band.add(l, l, s.transmissibility * dl);
            band.add(l, k, -s.transmissibility * dk);
        }
    }

    fn jacobian_csr(&self, u: &[f64]) -> CsrMatrix {
        let n = u.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for k in 0..n {
            let mut diag = self.diag(k);
            let dk = self.law.psi_prime(u[k]);
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for &(s, l) in self.mesh.neighbours(k) {
                let t = self.mesh.interfaces()[s].transmissibility;
                diag += t * dk;
                entries.push((l, -t * self.law.psi_prime(u[l])));
            }
            entries.push((k, diag));
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { row_ptr, cols, vals }
    }

    /// One nonlinear Gauss–Seidel sweep: each cell equation is solved exactly through the
    /// resolvent `(Id + λψ)⁻¹` with the neighbours frozen at their latest values.
    fn gauss_seidel_sweep(&self, graph: &MonotoneGraph, u: &mut [f64]) -> Result<(), GraphError> {
        for k in 0..u.len() {
            let m = self.mesh.cell(k).measure;
            let scale = self.dt / (self.coef * m);
            let mut tau_sum = 0.0;
            let mut inflow = 0.0;
            for &(s, l) in self.mesh.neighbours(k) {
                let t = self.mesh.interfaces()[s].transmissibility;
                tau_sum += t;
                inflow += t * self.law.psi(u[l]);
            }
            let y = self.history[k] / self.coef + scale * inflow;
            u[k] = if tau_sum == 0.0 {
                y
            } else {
                graph.resolvent(scale * tau_sum, y)?
            };
        }
        Ok(())
    }
}

fn bandwidth(mesh: &AdmissibleMesh) -> usize {
    mesh.interfaces()
        .iter()
        .map(|s| s.cells.0.abs_diff(s.cells.1))
        .max()
        .unwrap_or(0)
}

fn use_direct(choice: LinearSolver, n: usize, bw: usize) -> bool {
    match choice {
        LinearSolver::Direct => true,
        LinearSolver::Krylov => false,
        LinearSolver::Auto => (n as f64) * (bw as f64 + 1.0).powi(2) <= 2e8,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn solve_step(
    sys: &StepSystem<'_>,
    guess: &[f64],
    config: &SolverConfig,
    step: usize,
) -> Result<(Vec<f64>, StepStats), SolverError> {
    let n = guess.len();
    let tol = config.tolerance;
    let mut stats = StepStats::default();
    let mut u = guess.to_vec();
    if let Some(seed) = config.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let amp = 1e-3 * (1.0 + inf_norm(guess));
        u.iter_mut().for_each(|x| *x += amp * rng.gen_range(-1.0..1.0));
    }
    let mut f = vec![0.0; n];
    sys.residual(&u, &mut f);
    let mut r = sys.scaled_norm(&f);
    let mut converged = r <= tol && config.seed.is_none();

    if config.newton && !converged {
        let bw = bandwidth(sys.mesh);
        let direct = use_direct(config.linear_solver, n, bw);
        let mut band = if direct {
            Some(BandedMatrix::zeros(n, bw, bw))
        } else {
            None
        };
        let mut trial = vec![0.0; n];
        let mut f_trial = vec![0.0; n];
        'newton: while stats.newton_iterations < config.max_newton_iterations {
            stats.newton_iterations += 1;
            let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
            let solved = match band.as_mut() {
                Some(b) => {
                    sys.jacobian_banded(&u, b);
                    b.factorize().map(|_| b.solve_factored(&mut delta))
                }
                None => {
                    let j = sys.jacobian_csr(&u);
                    let rhs = delta.clone();
                    delta.iter_mut().for_each(|v| *v = 0.0);
                    bicgstab(&j, &rhs, &mut delta, 1e-13, 20 * n + 100).map(|_| ())
                }
            };
            if solved.is_err() {
                break;
            }
            let mut theta = 1.0;
            for _ in 0..=config.max_halvings {
                for i in 0..n {
                    trial[i] = u[i] + theta * delta[i];
                }
                sys.residual(&trial, &mut f_trial);
                let rt = sys.scaled_norm(&f_trial);
                if rt.is_finite() && (rt < r || rt <= tol) {
                    std::mem::swap(&mut u, &mut trial);
                    std::mem::swap(&mut f, &mut f_trial);
                    r = rt;
                    if r <= tol && theta * inf_norm(&delta) <= tol.sqrt() {
                        converged = true;
                        break 'newton;
                    }
                    continue 'newton;
                }
                theta *= 0.5;
            }
            break;
        }
    }

    if !converged && config.fallback {
        let graph = MonotoneGraph::power(sys.law);
        if !u.iter().all(|x| x.is_finite()) {
            u = guess.to_vec();
        }
        while stats.fallback_sweeps < config.max_fallback_sweeps {
            stats.fallback_sweeps += 1;
            sys.gauss_seidel_sweep(&graph, &mut u)?;
            sys.residual(&u, &mut f);
            r = sys.scaled_norm(&f);
            if r <= tol {
                converged = true;
                break;
            }
        }
    }

    stats.residual = r;
    if !converged {
        return Err(SolverError::Diverged {
            step,
            residual: r,
            newton_iterations: stats.newton_iterations,
            fallback_sweeps: stats.fallback_sweeps,
        });
    }
    Ok((u, stats))
}

/// Cell averages of the initial datum.
pub fn discretize_initial(mesh: &AdmissibleMesh, u0: impl Fn(Point) -> f64) -> CellVector {
    discrete_ops::project(mesh, u0)
}

fn check_dt(dt: f64) -> Result<(), SolverError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SolverError::InvalidConfig(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(())
}

/// One implicit Euler step from `u_prev`.
pub fn step_euler(
    mesh: &AdmissibleMesh,
    u_prev: &CellVector,
    dt: f64,
    config: &SolverConfig,
) -> Result<(CellVector, StepStats), SolverError> {
    let law = config.validate()?;
    check_dt(dt)?;
    CellVector::on_mesh(mesh, u_prev.values().to_vec())?;
    let sys = StepSystem::new(mesh, law, 1.0, dt, u_prev.values().to_vec());
    let (u, stats) = solve_step(&sys, u_prev.values(), config, 1)?;
    Ok((CellVector::new(u)?, stats))
}

/// One BDF2 step from `u^{k−1}` and `u^{k−2}`.
pub fn step_bdf2(
    mesh: &AdmissibleMesh,
    u_km1: &CellVector,
    u_km2: &CellVector,
    dt: f64,
    config: &SolverConfig,
) -> Result<(CellVector, StepStats), SolverError> {
    let law = config.validate()?;
    check_dt(dt)?;
    CellVector::on_mesh(mesh, u_km1.values().to_vec())?;
    CellVector::on_mesh(mesh, u_km2.values().to_vec())?;
    bdf2_inner(mesh, law, u_km1.values(), u_km2.values(), dt, config, 2).and_then(|(u, s)| Ok((CellVector::new(u)?, s)))
}

fn bdf2_inner(
    mesh: &AdmissibleMesh,
    law: PowerLaw,
    u1: &[f64],
    u2: &[f64],
    dt: f64,
    config: &SolverConfig,
    step: usize,
) -> Result<(Vec<f64>, StepStats), SolverError> {
    let history: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    // linear extrapolation is a better starting point than u^{k−1}
    let guess: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| 2.0 * a - b).collect();
    let sys = StepSystem::new(mesh, law, 1.5, dt, history);
    solve_step(&sys, &guess, config, step)
}

/// Monitors of one time level `k ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub mass_drift: f64,
    /// `¼ Σ m_K (u_K^k)² + Σ_{j≤k} Δt Σ τ (φ(u_K^j) − φ(u_L^j))²`.
    pub energy: f64,
    /// Cumulative `Σ_{j≤k} Δt Σ m_KL |ψ(u_K^j) − ψ(u_L^j)|`.
    pub flux_l1: f64,
    pub stats: StepStats,
}

/// Energy quantities at one time level `ℓ ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub step: usize,
    /// `(½ Σ m (u¹)² + Δt Σ τ (Δφ¹)², ½ Σ m (u⁰)²)` at `ℓ = 1`.
    pub euler: Option<(f64, f64)>,
    /// `(¼ Σ m ((u^ℓ)² + (2u^ℓ − u^{ℓ−1})²) + Σ_{k=2}^ℓ Δt Σ τ (Δφ^k)², same at ℓ = 1)` for `ℓ ≥ 2`.
    pub bdf2: Option<(f64, f64)>,
    /// `¼ Σ m (u^ℓ)² + Σ_{k≤ℓ} Δt Σ τ (Δφ^k)²`.
    pub global: f64,
    /// `2 Σ m (u⁰)²`.
    pub bound: f64,
}

impl EnergyRecord {
    /// Smallest of `rhs − lhs` over the inequalities present at this level.
    pub fn min_slack(&self) -> f64 {
        let mut s = self.bound - self.global;
        if let Some((l, r)) = self.euler {
            s = s.min(r - l);
        }
        if let Some((l, r)) = self.bdf2 {
            s = s.min(r - l);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub q: f64,
    pub initial_mass: f64,
    /// `Σ m_K |u_K⁰|`, the scale of mass drift.
    pub initial_abs_mass: f64,
    /// `Σ m_K (u_K⁰)²`.
    pub initial_l2_squared: f64,
    pub steps: Vec<StepRecord>,
    pub energy: Vec<EnergyRecord>,
    pub flux_l1: f64,
    /// `‖π φ(u)‖_{L²(Q_T)}`.
    pub phi_l2: f64,
    /// `‖π u‖_{L^{q+1}(Q_T)}`.
    pub u_lq1: f64,
    pub wall_time: f64,
    pub newton_failures: usize,
    pub violations: Vec<String>,
}

impl RunReport {
    pub fn max_mass_drift(&self) -> f64 {
        self.steps.iter().map(|s| s.mass_drift).fold(0.0, f64::max)
    }

    pub fn min_energy_slack(&self) -> f64 {
        self.energy
            .iter()
            .map(|e| e.bound - e.global)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_newton_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.stats.newton_iterations).sum()
    }

    /// One row per step:
    /// `step,time,mass,mass_drift,energy,energy_bound,flux_l1,newton_iterations,fallback_sweeps,residual`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), DiscreteError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step",
            "time",
            "mass",
            "mass_drift",
            "energy",
            "energy_bound",
            "flux_l1",
            "newton_iterations",
            "fallback_sweeps",
            "residual",
        ])?;
        for (s, e) in self.steps.iter().zip(&self.energy) {
            w.write_record([
                s.step.to_string(),
                fmt_real(s.time),
                fmt_real(s.mass),
                fmt_real(s.mass_drift),
                fmt_real(s.energy),
                fmt_real(e.bound),
                fmt_real(s.flux_l1),
                s.stats.newton_iterations.to_string(),
                s.stats.fallback_sweeps.to_string(),
                fmt_real(s.stats.residual),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mass(mesh: &AdmissibleMesh, u: &[f64]) -> f64 {
    mesh.cells().iter().zip(u).map(|(c, v)| c.measure * v).sum()
}

fn phi_dissipation(mesh: &AdmissibleMesh, law: PowerLaw, u: &[f64]) -> f64 {
    mesh.interfaces()
        .iter()
        .map(|s| s.transmissibility * (law.phi(u[s.cells.0]) - law.phi(u[s.cells.1])).powi(2))
        .sum()
}

/// `Σ_σ m_σ |ψ(u_K) − ψ(u_L)|` at one time level.
fn flux_l1_level(mesh: &AdmissibleMesh, law: PowerLaw, u: &[f64]) -> f64 {
    mesh.interfaces()
        .iter()
        .map(|s| s.measure * (law.psi(u[s.cells.0]) - law.psi(u[s.cells.1])).abs())
        .sum()
}

/// Energy quantities of a trajectory for every `ℓ ∈ 1..=n`.
pub fn energy_functionals(
    mesh: &AdmissibleMesh,
    grid: &TimeGrid,
    field: &SpaceTimeField,
    law: PowerLaw,
) -> Vec<EnergyRecord> {
    let n = grid.steps();
    let l2 = |u: &[f64]| discrete_ops::l2_norm_squared(mesh, u);
    let u0 = field.slot(0);
    let bound = 2.0 * l2(u0);
    let mut out = Vec::with_capacity(n);
    let mut dissipation = 0.0;
    let mut bdf2_rhs = 0.0;
    let mut bdf2_dissipation = 0.0;
    for l in 1..=n {
        let ul = field.slot(l);
        let ulm1 = field.slot(l - 1);
        let d = grid.dt(l) * phi_dissipation(mesh, law, ul);
        dissipation += d;
        let two_step: Vec<f64> = ul.iter().zip(ulm1).map(|(a, b)| 2.0 * a - b).collect();
        let ledger = 0.25 * (l2(ul) + l2(&two_step));
        let (euler, bdf2) = if l == 1 {
            bdf2_rhs = ledger;
            (Some((0.5 * l2(ul) + d, 0.5 * l2(u0))), None)
        } else {
            bdf2_dissipation += d;
            (None, Some((ledger + bdf2_dissipation, bdf2_rhs)))
        };
        out.push(EnergyRecord {
            step: l,
            euler,
            bdf2,
            global: 0.25 * l2(ul) + dissipation,
            bound,
        });
    }
    out
}

/// `‖∇ψ(u)‖_{L¹(Q_T)} = Σ_k Δt Σ_σ m_σ |ψ(u_K^k) − ψ(u_L^k)|`.
pub fn flux_l1_norm(mesh: &AdmissibleMesh, grid: &TimeGrid, field: &SpaceTimeField, law: PowerLaw) -> f64 {
    (1..=grid.steps())
        .map(|k| grid.dt(k) * flux_l1_level(mesh, law, field.slot(k)))
        .sum()
}

/// Runs the scheme over `grid` from the discrete initial vector `u0`.
pub fn run(
    mesh: &AdmissibleMesh,
    grid: &TimeGrid,
    u0: &CellVector,
    config: &SolverConfig,
) -> Result<(SpaceTimeField, RunReport), SolverError> {
    let start = Instant::now();
    let law = config.validate()?;
    if !grid.is_uniform() {
        return Err(SolverError::NonUniformGrid(grid.step_spread()));
    }
    CellVector::on_mesh(mesh, u0.values().to_vec())?;
    let n = grid.steps();
    let mut field = SpaceTimeField::zeros(0, mesh.num_cells());
    field.push_slot(u0.values());
    let initial_mass = mass(mesh, u0.values());
    let initial_abs_mass: f64 = mesh
        .cells()
        .iter()
        .zip(u0.values())
        .map(|(c, v)| c.measure * v.abs())
        .sum();
    let mut steps = Vec::with_capacity(n);
    let mut flux = 0.0;
    let mut energy_dissipation = 0.0;
    let mut phi_sq = 0.0;
    let mut u_pow = 0.0;
    let mut newton_failures = 0;
    for k in 1..=n {
        let dt = grid.dt(k);
        let (u, stats) = if k == 1 {
            let sys = StepSystem::new(mesh, law, 1.0, dt, u0.values().to_vec());
            solve_step(&sys, u0.values(), config, 1)?
        } else {
            bdf2_inner(mesh, law, field.slot(k - 1), field.slot(k - 2), dt, config, k)?
        };
        if stats.fallback_sweeps > 0 && config.newton {
            newton_failures += 1;
        }
        let m = mass(mesh, &u);
        flux += dt * flux_l1_level(mesh, law, &u);
        energy_dissipation += dt * phi_dissipation(mesh, law, &u);
        phi_sq += dt
            * mesh
                .cells()
                .iter()
                .zip(&u)
                .map(|(c, v)| c.measure * law.phi(*v).powi(2))
                .sum::<f64>();
        u_pow += dt
            * mesh
                .cells()
                .iter()
                .zip(&u)
                .map(|(c, v)| c.measure * v.abs().powf(law.exponent() + 1.0))
                .sum::<f64>();
        steps.push(StepRecord {
            step: k,
            time: grid.time(k),
            mass: m,
            mass_drift: (m - initial_mass).abs(),
            energy: 0.25 * discrete_ops::l2_norm_squared(mesh, &u) + energy_dissipation,
            flux_l1: flux,
            stats,
        });
        field.push_slot(&u);
    }
    let energy = energy_functionals(mesh, grid, &field, law);
    let initial_l2_squared = discrete_ops::l2_norm_squared(mesh, u0.values());
    let mut violations = Vec::new();
    let mass_tol = 1e-10 * initial_abs_mass.max(f64::MIN_POSITIVE);
    for s in &steps {
        if s.mass_drift > mass_tol {
            violations.push(format!("mass drift {:e} at step {}", s.mass_drift, s.step));
        }
    }
    let energy_tol = 1e-8 * initial_l2_squared.max(f64::MIN_POSITIVE);
    for e in &energy {
        if e.bound - e.global < -energy_tol {
            violations.push(format!(
                "energy bound exceeded by {:e} at step {}",
                e.global - e.bound,
                e.step
            ));
        }
        if let Some((l, r)) = e.euler.or(e.bdf2) {
            if r - l < -energy_tol {
                violations.push(format!(
                    "step energy inequality exceeded by {:e} at step {}",
                    l - r,
                    e.step
                ));
            }
        }
    }
    let report = RunReport {
        q: law.exponent(),
        initial_mass,
        initial_abs_mass,
        initial_l2_squared,
        steps,
        energy,
        flux_l1: flux,
        phi_l2: phi_sq.sqrt(),
        u_lq1: u_pow.powf(1.0 / (law.exponent() + 1.0)),
        wall_time: start.elapsed().as_secs_f64(),
        newton_failures,
        violations,
    };
    Ok((field, report))
}

/// Terms of the discrete weak formulation tested against `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakForm {
    /// `Σ_k Δt Σ_K m_K (δ̂u)_K^k φ̂_K^k`.
    pub a: f64,
    /// `Σ_k Δt Σ_σ τ_σ (ψ(u_K^k) − ψ(u_L^k)) ((Pφ)_K^k − (Pφ)_L^k)`.
    pub b: f64,
    /// `Σ_k Δt Σ_σ τ_σ (ψ(u_K^k) − ψ(u_L^k)) (w_K^k − w_L^k)` with `w = φ̂ − Pφ`.
    pub c: f64,
    pub total: f64,
    /// Sum of the absolute values of the terms making up `total`.
    pub scale: f64,
    /// `|Σ_k Δt Σ_K m_K (δ̂u)_K^k (Pφ)_K^k|`.
    pub dual_pairing: f64,
    /// `max_k ‖∇ (Pφ)^k‖_∞`.
    pub grad_p_phi_inf: f64,
}

/// Evaluates the weak formulation of a computed trajectory against a test function.
pub fn weak_form_residual(
    mesh: &AdmissibleMesh,
    op: &MultistepOperator,
    field: &SpaceTimeField,
    law: PowerLaw,
    phi: impl Fn(Point, f64) -> f64,
) -> Result<WeakForm, SolverError> {
    let grid = op.grid();
    let p_phi = discrete_ops::project_space_time(mesh, grid, phi);
    let phi_hat = op.transform_test_vector(&p_phi)?;
    let du = op.apply_delta(field)?;
    let (mut a, mut b, mut c, mut scale, mut dual, mut grad_inf) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0f64);
    for k in 1..=grid.steps() {
        let dt = grid.dt(k);
        let (u, d, ph, pp) = (field.slot(k), du.slot(k), phi_hat.slot(k), p_phi.slot(k));
        for (cell, c_) in mesh.cells().iter().enumerate() {
            let term = c_.measure * d[cell] * ph[cell];
            a += dt * term;
            scale += dt * term.abs();
            dual += dt * c_.measure * d[cell] * pp[cell];
        }
        for s in mesh.interfaces() {
            let (kk, ll) = s.cells;
            let dpsi = s.transmissibility * (law.psi(u[kk]) - law.psi(u[ll]));
            let dp = pp[kk] - pp[ll];
            let dw = (ph[kk] - pp[kk]) - (ph[ll] - pp[ll]);
            b += dt * dpsi * dp;
            c += dt * dpsi * dw;
            scale += dt * (dpsi * (ph[kk] - ph[ll])).abs();
            grad_inf = grad_inf.max(mesh.dim() as f64 * dp.abs() / s.distance);
        }
    }
    Ok(WeakForm {
        a,
        b,
        c,
        total: a + b + c,
        scale,
        dual_pairing: dual.abs(),
        grad_p_phi_inf: grad_inf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_grid, BoxDomain};
    use approx::assert_relative_eq;

    fn two_cell() -> AdmissibleMesh {
        build_uniform_grid(&BoxDomain::unit(2), &[2, 1]).unwrap()
    }

    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(g(lo) <= 0.0 && g(hi) >= 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn constant_and_zero_states_are_fixed() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[6]).unwrap();
        let cfg = SolverConfig::default();
        for c in [0.0, 1.7, -0.4] {
            let v = CellVector::constant(6, c);
            let (u, _) = step_euler(&m, &v, 0.1, &cfg).unwrap();
            assert_eq!(u, v);
            let (w, _) = step_bdf2(&m, &v, &v, 0.1, &cfg).unwrap();
            for x in w.values() {
                assert!((x - c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_cell_euler_matches_bisection() {
        let m = two_cell();
        let cfg = SolverConfig::with_q(2.0);
        let dt = 0.1;
        let (u, _) = step_euler(&m, &CellVector::new(vec![1.0, 0.0]).unwrap(), dt, &cfg).unwrap();
        let g = |x: f64| 0.5 * (x - 1.0) / dt + 2.0 * (psi2(x) - psi2(1.0 - x));
        let x = bisect(g, 0.0, 1.0);
        assert!((u.get(0) - x).abs() < 1e-10);
        assert_eq!(u.get(0) + u.get(1), 1.0);
        // single-step energy inequality and flux norm
        let grid = TimeGrid::uniform(1, dt).unwrap();
        let field = SpaceTimeField::from_slots(vec![vec![1.0, 0.0], u.values().to_vec()]).unwrap();
        let law = PowerLaw::new(2.0).unwrap();
        let e = energy_functionals(&m, &grid, &field, law);
        let (lhs, rhs) = e[0].euler.unwrap();
        assert!(lhs <= rhs);
        let flux = flux_l1_norm(&m, &grid, &field, law);
        assert_relative_eq!(flux, dt * (psi2(x) - psi2(1.0 - x)).abs(), max_relative = 1e-9);
    }

    fn psi2(x: f64) -> f64 {
        x.abs() * x
    }

    #[test]
    fn linear_bdf2_two_cell_elimination() {
        let m = two_cell();
        let cfg = SolverConfig::with_q(1.0);
        let dt = 0.2;
        let (a, b) = ([0.3, -0.8], [1.0, 0.5]);
        let (u, _) = step_bdf2(
            &m,
            &CellVector::new(a.to_vec()).unwrap(),
            &CellVector::new(b.to_vec()).unwrap(),
            dt,
            &cfg,
        )
        .unwrap();
        // [[c+2, −2], [−2, c+2]] u = r with c = 1.5·0.5/Δt
        let c = 0.75 / dt;
        let r = [
            0.5 * (2.0 * a[0] - 0.5 * b[0]) / dt,
            0.5 * (2.0 * a[1] - 0.5 * b[1]) / dt,
        ];
        let det = (c + 2.0).powi(2) - 4.0;
        let x0 = ((c + 2.0) * r[0] + 2.0 * r[1]) / det;
        let x1 = (2.0 * r[0] + (c + 2.0) * r[1]) / det;
        assert!((u.get(0) - x0).abs() < 1e-12 && (u.get(1) - x1).abs() < 1e-12);
        let mass_residual: f64 = (0..2).map(|k| 0.5 * (1.5 * u.get(k) - 2.0 * a[k] + 0.5 * b[k])).sum();
        assert!(mass_residual.abs() < 1e-13);
    }

    #[test]
    fn fallback_reproduces_newton() {
        let m = two_cell();
        let v = CellVector::new(vec![1.0, 0.0]).unwrap();
        let newton = step_euler(&m, &v, 0.1, &SolverConfig::default()).unwrap().0;
        let cfg = SolverConfig {
            newton: false,
            ..SolverConfig::default()
        };
        let (gs, stats) = step_euler(&m, &v, 0.1, &cfg).unwrap();
        assert!(stats.fallback_sweeps > 0 && stats.newton_iterations == 0);
        for k in 0..2 {
            assert!((gs.get(k) - newton.get(k)).abs() < 1e-9);
        }
    }

    #[test]
    fn krylov_matches_direct() {
        let m = build_uniform_grid(&BoxDomain::unit(2), &[6, 5]).unwrap();
        let u0 = discretize_initial(&m, |p| {
            (1.0 - 4.0 * ((p[0] - 0.4).powi(2) + (p[1] - 0.5).powi(2))).max(0.0)
        });
        let direct = step_euler(&m, &u0, 0.01, &SolverConfig::default()).unwrap().0;
        let cfg = SolverConfig {
            linear_solver: LinearSolver::Krylov,
            ..SolverConfig::default()
        };
        let krylov = step_euler(&m, &u0, 0.01, &cfg).unwrap().0;
        for (a, b) in direct.values().iter().zip(krylov.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn box_profile_run_monitors() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[16]).unwrap();
        let grid = TimeGrid::uniform(8, 0.05).unwrap();
        let u0 = discretize_initial(&m, |p| if (0.25..0.5).contains(&p[0]) { 1.0 } else { 0.0 });
        let (field, report) = run(&m, &grid, &u0, &SolverConfig::default()).unwrap();
        assert_eq!(field.num_slots(), 9);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.max_mass_drift() <= 1e-10 * report.initial_abs_mass);
        assert!(report.min_energy_slack() >= 0.0);
    }

    #[test]
    fn zero_initial_data() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[5]).unwrap();
        let grid = TimeGrid::uniform(3, 1.0).unwrap();
        let (field, report) = run(&m, &grid, &CellVector::zeros(5), &SolverConfig::default()).unwrap();
        assert!((0..4).all(|k| field.slot(k).iter().all(|v| *v == 0.0)));
        assert!(report.energy.iter().all(|e| e.global == 0.0 && e.bound == 0.0));
        assert_eq!(report.flux_l1, 0.0);
    }

    #[test]
    fn seeds_do_not_change_the_solution() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[20]).unwrap();
        let grid = TimeGrid::uniform(5, 0.1).unwrap();
        let u0 = discretize_initial(&m, |p| (std::f64::consts::PI * p[0]).cos());
        let a = run(
            &m,
            &grid,
            &u0,
            &SolverConfig {
                seed: Some(1),
                ..SolverConfig::default()
            },
        )
        .unwrap()
        .0;
        let b = run(
            &m,
            &grid,
            &u0,
            &SolverConfig {
                seed: Some(99),
                ..SolverConfig::default()
            },
        )
        .unwrap()
        .0;
        for k in 0..6 {
            for (x, y) in a.slot(k).iter().zip(b.slot(k)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nonuniform_grid_and_bad_config_rejected() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[4]).unwrap();
        let g = TimeGrid::from_steps(&[0.1, 0.2]).unwrap();
        assert!(matches!(
            run(&m, &g, &CellVector::zeros(4), &SolverConfig::default()),
            Err(SolverError::NonUniformGrid(_))
        ));
        let bad = SolverConfig {
            q: 0.5,
            ..SolverConfig::default()
        };
        assert!(matches!(
            step_euler(&m, &CellVector::zeros(4), 0.1, &bad),
            Err(SolverError::InvalidConfig(_))
        ));
        assert!(step_euler(&m, &CellVector::zeros(4), -0.1, &SolverConfig::default()).is_err());
    }

    #[test]
    fn weak_form_vanishes_for_zero_inputs() {
        let m = build_uniform_grid(&BoxDomain::unit(1), &[8]).unwrap();
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let op = MultistepOperator::build_bdf2_uniform(&grid).unwrap();
        let law = PowerLaw::new(2.0).unwrap();
        let zero = SpaceTimeField::zeros(5, 8);
        let w = weak_form_residual(&m, &op, &zero, law, |p, t| p[0] * (1.0 - t)).unwrap();
        assert_eq!((w.a, w.b, w.c, w.total), (0.0, 0.0, 0.0, 0.0));
        let u0 = discretize_initial(&m, |p| p[0]);
        let (field, _) = run(&m, &grid, &u0, &SolverConfig::default()).unwrap();
        let w = weak_form_residual(&m, &op, &field, law, |_, _| 0.0).unwrap();
        assert_eq!((w.a, w.b, w.c, w.total), (0.0, 0.0, 0.0, 0.0));
    }
}
