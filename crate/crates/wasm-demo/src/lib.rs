//! Browser bindings for the static demo page in `www/`.

use pmefv::convergence::{refinement_study_min, Coupling, ReferenceSolution, StudySpec};
use pmefv::mesh::{build_uniform_grid, BoxDomain};
use pmefv::solver::{discretize_initial, run, RunReport};
use pmefv::time_algebra::{bdf2_inverse_norm_closed_form, check_at, MultistepOperator};
use pmefv::{SolverConfig, TimeGrid};
use wasm_bindgen::prelude::*;

const MAX_CELLS: usize = 4096;
const MAX_STEPS: usize = 4096;

/// Trajectory of a 1D run on [-3, 3].
#[wasm_bindgen]
pub struct Simulation {
    centers: Vec<f64>,
    times: Vec<f64>,
    profiles: Vec<Vec<f64>>,
    exact: Option<Vec<Vec<f64>>>,
    report: RunReport,
}

#[wasm_bindgen]
impl Simulation {
    pub fn centers(&self) -> Vec<f64> {
        self.centers.clone()
    }

    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    pub fn num_slots(&self) -> usize {
        self.profiles.len()
    }

    pub fn profile(&self, k: usize) -> Vec<f64> {
        self.profiles.get(k).cloned().unwrap_or_default()
    }

    /// Barenblatt values at the cell centres, empty for other initial data.
    pub fn exact(&self, k: usize) -> Vec<f64> {
        self.exact.as_ref().and_then(|e| e.get(k).cloned()).unwrap_or_default()
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.report.max_mass_drift()
    }

    pub fn min_energy_slack(&self) -> f64 {
        self.report.min_energy_slack()
    }

    pub fn energy(&self) -> Vec<f64> {
        self.report.energy.iter().map(|e| e.global).collect()
    }

    pub fn energy_bound(&self) -> f64 {
        self.report.energy.first().map_or(0.0, |e| e.bound)
    }

    pub fn newton_iterations(&self) -> usize {
        self.report.total_newton_iterations()
    }
}

fn check_sizes(cells: usize, steps: usize) -> Result<(), String> {
    if cells == 0 || cells > MAX_CELLS {
        return Err(format!("cells must lie in 1..={MAX_CELLS}"));
    }
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("steps must lie in 1..={MAX_STEPS}"));
    }
    Ok(())
}

/// Runs the scheme on [-3, 3] up to `horizon`. `preset` is `barenblatt`, `box` or `twin`.
pub fn simulate_native(q: f64, cells: usize, steps: usize, horizon: f64, preset: &str) -> Result<Simulation, String> {
    check_sizes(cells, steps)?;
    let mesh = build_uniform_grid(&BoxDomain::new(&[-3.0], &[3.0]), &[cells]).map_err(|e| e.to_string())?;
    let grid = TimeGrid::uniform(steps, horizon).map_err(|e| e.to_string())?;
    let reference = match preset {
        "barenblatt" => Some(ReferenceSolution::barenblatt(q, 1, 1.0, [0.0, 0.0]).map_err(|e| e.to_string())?),
        "box" | "twin" => None,
        other => return Err(format!("unknown preset `{other}`")),
    };
    let u0 = match (&reference, preset) {
        (Some(r), _) => discretize_initial(&mesh, |p| r.eval(p, 0.0)),
        (None, "box") => discretize_initial(&mesh, |p| if p[0].abs() < 1.0 { 1.0 } else { 0.0 }),
        _ => discretize_initial(&mesh, |p| {
            if (p[0] + 1.5).abs() < 0.5 {
                1.0
            } else if (p[0] - 1.0).abs() < 0.75 {
                -0.5
            } else {
                0.0
            }
        }),
    };
    let (field, report) = run(&mesh, &grid, &u0, &SolverConfig::with_q(q)).map_err(|e| e.to_string())?;
    let centers: Vec<f64> = mesh.cells().iter().map(|c| c.center[0]).collect();
    let exact = reference.map(|r| {
        grid.times()
            .iter()
            .map(|&t| centers.iter().map(|&x| r.eval([x, 0.0], t)).collect())
            .collect()
    });
    Ok(Simulation {
        profiles: (0..field.num_slots()).map(|k| field.slot(k).to_vec()).collect(),
        times: grid.times().to_vec(),
        centers,
        exact,
        report,
    })
}

/// `‖A⁻¹‖₁` of the uniform BDF2 matrix for `n = 1..=max_n`, followed by the closed form
/// `(3/2)(1 − 3⁻ⁿ)` for the same `n`.
pub fn bdf2_norms_native(max_n: usize) -> Result<Vec<f64>, String> {
    if max_n == 0 || max_n > 500 {
        return Err("n must lie in 1..=500".into());
    }
    let mut computed = Vec::with_capacity(2 * max_n);
    for n in 1..=max_n {
        let grid = TimeGrid::uniform(n, 1.0).map_err(|e| e.to_string())?;
        let op = MultistepOperator::build_bdf2_uniform(&grid).map_err(|e| e.to_string())?;
        computed.push(check_at(&op, 1.5).map_err(|e| e.to_string())?.norm);
    }
    computed.extend((1..=max_n).map(bdf2_inverse_norm_closed_form));
    Ok(computed)
}

/// Barenblatt refinement study on [-3, 3] with `Δt ∝ h`; returns, per level,
/// `[cells, h, l2_error]` flattened.
pub fn barenblatt_study_native(q: f64, base_cells: usize, levels: usize) -> Result<Vec<f64>, String> {
    if !(2..=6).contains(&levels) {
        return Err("levels must lie in 2..=6".into());
    }
    check_sizes(base_cells << (levels - 1), base_cells.max(2) << (levels - 1))?;
    let spec = StudySpec {
        domain: BoxDomain::new(&[-3.0], &[3.0]),
        base_counts: vec![base_cells],
        base_steps: (base_cells / 2).max(1),
        horizon: 1.0,
        levels,
        coupling: Coupling::Linear,
    };
    let reference = ReferenceSolution::barenblatt(q, 1, 1.0, [0.0, 0.0]).map_err(|e| e.to_string())?;
    let (table, _) = refinement_study_min(&spec, &reference, &SolverConfig::with_q(q), 2).map_err(|e| e.to_string())?;
    Ok(table
        .rows
        .iter()
        .flat_map(|r| [r.cells as f64, r.h, r.errors.l2])
        .collect())
}

#[wasm_bindgen]
pub fn simulate(q: f64, cells: usize, steps: usize, horizon: f64, preset: &str) -> Result<Simulation, JsError> {
    simulate_native(q, cells, steps, horizon, preset).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bdf2_norms(max_n: usize) -> Result<Vec<f64>, JsError> {
    bdf2_norms_native(max_n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn barenblatt_study(q: f64, base_cells: usize, levels: usize) -> Result<Vec<f64>, JsError> {
    barenblatt_study_native(q, base_cells, levels).map_err(|e| JsError::new(&e))
}
