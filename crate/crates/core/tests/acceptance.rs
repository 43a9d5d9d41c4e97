//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the process exits
//! nonzero when any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use pmefv::convergence::{
    compactness_probe, refinement_study, temporal_study, test_battery, Coupling, ReferenceSolution, StudySpec,
};
use pmefv::discrete_ops::{project, project_space_time, space_time_pairing};
use pmefv::mesh::{build_uniform_grid, Point};
use pmefv::monotone_graph::{bdf2_multiplier_gap, cs_gap, cs_gap_scale, MonotoneGraph, PowerLaw};
use pmefv::solver::{discretize_initial, run, step_bdf2, step_euler, RunReport};
use pmefv::time_algebra::{bdf2_inverse_norm_closed_form, check_at};
use pmefv::{
    AdmissibleMesh, BoxDomain, CellVector, MultistepOperator, SolverConfig, SpaceTimeField, TimeGrid, WeightField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Runs that criteria 3 and 4 audit, collected from every criterion that solves.
#[derive(Default)]
struct RunLog {
    runs: Vec<(String, RunReport)>,
}

impl RunLog {
    fn push(&mut self, name: impl Into<String>, report: &RunReport) {
        self.runs.push((name.into(), report.clone()));
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in 1..=200 {
        let grid = TimeGrid::uniform(n, 1.0).unwrap();
        let op = MultistepOperator::build_bdf2_uniform(&grid).unwrap();
        let c = check_at(&op, 1.5 * (1.0 + 1e-12)).unwrap();
        worst = worst.max((c.norm - bdf2_inverse_norm_closed_form(n)).abs());
        if !c.pass {
            return outcome(false, format!("norm {} exceeds 3/2 at n = {n}", c.norm));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 1.0,
        format!("max |‖A⁻¹‖₁ − (3/2)(1−3⁻ⁿ)| = {worst:.3e} over n ≤ 200 in {secs:.3}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sample = |rng: &mut ChaCha8Rng| {
        let mag = 10f64.powf(rng.gen_range(-3.0..2.0));
        rng.gen_range(-1.0..1.0) * mag
    };
    let mut worst_cs = f64::INFINITY;
    for q in [1.5, 2.0, 3.0] {
        for _ in 0..100_000 {
            let (a, b) = (sample(&mut rng), sample(&mut rng));
            worst_cs = worst_cs.min(cs_gap(a, b, q) / cs_gap_scale(a, b, q));
        }
    }
    let mut worst_bdf2: f64 = 0.0;
    for _ in 0..100_000 {
        let (a, b, c) = (sample(&mut rng), sample(&mut rng), sample(&mut rng));
        let expected = 0.25 * (a - 2.0 * b + c).powi(2);
        let scale = (a * a + b * b + c * c).max(1.0);
        worst_bdf2 = worst_bdf2.max((bdf2_multiplier_gap(a, b, c) - expected).abs() / scale);
    }
    let graphs = [
        MonotoneGraph::power(PowerLaw::new(1.5).unwrap()),
        MonotoneGraph::power(PowerLaw::new(2.0).unwrap()),
        MonotoneGraph::power(PowerLaw::new(3.0).unwrap()),
        MonotoneGraph::stefan(0.5, 1.0, 0.3, 2.0).unwrap(),
    ];
    let mut expansive = 0;
    for i in 0..10_000 {
        let g = &graphs[i % graphs.len()];
        let lambda = 10f64.powf(rng.gen_range(-2.0..2.0));
        let (y1, y2) = (sample(&mut rng), sample(&mut rng));
        let (r1, r2) = (g.resolvent(lambda, y1).unwrap(), g.resolvent(lambda, y2).unwrap());
        if (r1 - r2).abs() > (y1 - y2).abs() * (1.0 + 1e-12) + 1e-13 {
            expansive += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_cs >= -1e-13 && worst_bdf2 <= 1e-13 && expansive == 0 && secs < 5.0,
        format!(
            "min CS gap/scale = {worst_cs:.3e}, max BDF2 gap deviation = {worst_bdf2:.3e}, expansive resolvent pairs = {expansive}, {secs:.2}s"
        ),
    )
}

fn energy_run(log: &mut RunLog) -> Outcome {
    let start = Instant::now();
    let mesh = build_uniform_grid(&BoxDomain::new(&[-3.0], &[3.0]), &[128]).unwrap();
    let grid = TimeGrid::uniform(64, 1.0).unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    let profiles: [(&str, Box<dyn Fn(Point) -> f64>); 3] = [
        ("box", Box::new(|p: Point| if p[0].abs() < 1.0 { 1.0 } else { 0.0 })),
        ("signed", Box::new(|p: Point| (2.0 * p[0]).sin() * (-p[0] * p[0]).exp())),
        ("barenblatt", {
            let r = ReferenceSolution::barenblatt(2.0, 1, 1.0, [0.0, 0.0]).unwrap();
            Box::new(move |p: Point| r.eval(p, 0.0))
        }),
    ];
    for (name, f) in profiles.iter() {
        let u0 = discretize_initial(&mesh, f);
        let (_, report) = run(&mesh, &grid, &u0, &SolverConfig::with_q(2.0)).unwrap();
        let slack = report.min_energy_slack() / report.initial_l2_squared;
        pass &= slack >= -1e-8;
        detail.push(format!("{name} slack/‖u⁰‖² = {slack:.3e}"));
        log.push(format!("energy/{name}"), &report);
    }
    let secs = start.elapsed().as_secs_f64();
    // the remaining logged runs come from the other criteria
    let others = log
        .runs
        .iter()
        .map(|(_, r)| r.min_energy_slack() / r.initial_l2_squared.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    pass &= others >= -1e-8 && secs < 10.0;
    outcome(
        pass,
        format!(
            "128 cells, n = 64, q = 2: {}; worst over {} logged runs = {others:.3e}; {secs:.2}s",
            detail.join(", "),
            log.runs.len()
        ),
    )
}

fn criterion_4(log: &RunLog) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut name = "";
    for (n, r) in &log.runs {
        if r.initial_abs_mass == 0.0 {
            continue;
        }
        let rel = r.max_mass_drift() / r.initial_abs_mass;
        if rel >= worst {
            worst = rel;
            name = n;
        }
    }
    outcome(
        worst <= 1e-10,
        format!(
            "max relative mass drift {worst:.3e} ({name}) over {} runs",
            log.runs.len()
        ),
    )
}

fn psi(u: f64, q: f64) -> f64 {
    u.abs().powf(q - 1.0) * u
}

/// Solves `g(x) = 0` for increasing `g` by bisection on an expanding bracket.
fn bisect(g: impl Fn(f64) -> f64) -> f64 {
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = -1.0;
    while g(lo) > 0.0 {
        lo *= 2.0;
    }
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

fn criterion_5() -> Outcome {
    // two unit-height cells of width 1/2: m_K = 1/2, τ = 1/(1/2) = 2
    let mesh = build_uniform_grid(&BoxDomain::unit(2), &[2, 1]).unwrap();
    let (m, tau) = (0.5, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for q in [2.0, 3.0] {
        let cfg = SolverConfig {
            tolerance: 1e-13,
            ..SolverConfig::with_q(q)
        };
        for _ in 0..20 {
            let dt = 10f64.powf(rng.gen_range(-3.0..0.0));
            let u0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            // Euler: u_K + u_L = u⁰_K + u⁰_L
            let (u1, _) = step_euler(&mesh, &CellVector::new(u0.to_vec()).unwrap(), dt, &cfg).unwrap();
            let s = u0[0] + u0[1];
            let x = bisect(|x| m * (x - u0[0]) / dt + tau * (psi(x, q) - psi(s - x, q)));
            worst = worst.max((u1.get(0) - x).abs()).max((u1.get(1) - (s - x)).abs());
            // BDF2: u_K + u_L = (2/3)(h_K + h_L) with h = 2u^{k−1} − u^{k−2}/2
            let um2 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let h = [2.0 * u0[0] - 0.5 * um2[0], 2.0 * u0[1] - 0.5 * um2[1]];
            let (u2, _) = step_bdf2(
                &mesh,
                &CellVector::new(u0.to_vec()).unwrap(),
                &CellVector::new(um2.to_vec()).unwrap(),
                dt,
                &cfg,
            )
            .unwrap();
            let s = (h[0] + h[1]) / 1.5;
            let x = bisect(|x| m * (1.5 * x - h[0]) / dt + tau * (psi(x, q) - psi(s - x, q)));
            worst = worst.max((u2.get(0) - x).abs()).max((u2.get(1) - (s - x)).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max deviation from bisection oracle {worst:.3e} over 80 steps"),
    )
}

fn barenblatt_spec(levels: usize) -> (StudySpec, ReferenceSolution) {
    let spec = StudySpec {
        domain: BoxDomain::new(&[-3.0], &[3.0]),
        base_counts: vec![32],
        base_steps: 16,
        horizon: 1.0,
        levels,
        coupling: Coupling::Linear,
    };
    (spec, ReferenceSolution::barenblatt(2.0, 1, 1.0, [0.0, 0.0]).unwrap())
}

fn criterion_6_and_8(log: &mut RunLog) -> (Outcome, Outcome) {
    let start = Instant::now();
    let (spec, reference) = barenblatt_spec(4);
    let (table, runs) = refinement_study(&spec, &reference, &SolverConfig::with_q(2.0)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let errors = table.l2_errors();
    let factors: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let c6 = outcome(
        factors.iter().all(|f| *f >= 1.5) && secs < 120.0,
        format!(
            "L²(Q_T) errors {} with reduction factors {} ({secs:.2}s)",
            errors
                .iter()
                .map(|e| format!("{e:.3e}"))
                .collect::<Vec<_>>()
                .join(" > "),
            factors.iter().map(|f| format!("{f:.2}")).collect::<Vec<_>>().join(", ")
        ),
    );
    for (r, row) in runs.iter().zip(&table.rows) {
        log.push(format!("barenblatt/{} cells", row.cells), &r.report);
    }

    let law = PowerLaw::new(2.0).unwrap();
    let battery = test_battery(&spec.domain, spec.horizon);
    let mut worst_weak: f64 = 0.0;
    let mut ok_dual = true;
    let mut dual = Vec::new();
    for r in &runs {
        let rep = compactness_probe(&r.mesh, &r.grid, &r.field, law, &battery, &[]).unwrap();
        worst_weak = worst_weak.max(rep.weak_form_worst);
        ok_dual &= rep.dual_ratio <= rep.dual_bound;
        dual.push(format!("{:.3e} ≤ {:.3e}", rep.dual_ratio, rep.dual_bound));
    }
    let c8 = outcome(
        worst_weak <= 1e-8 && ok_dual,
        format!(
            "max |𝒜+ℬ+𝒞|/scale = {worst_weak:.3e} over 12 test functions; dual ratio vs flux bound per level: {}",
            dual.join(", ")
        ),
    );
    (c6, c8)
}

fn criterion_7(log: &mut RunLog) -> Outcome {
    let start = Instant::now();
    let mesh = build_uniform_grid(&BoxDomain::unit(1), &[64]).unwrap();
    let u0 = discretize_initial(&mesh, |p| 1.0 + (PI * p[0]).cos() + 0.2 * (2.0 * PI * p[0]).cos());
    let cfg = SolverConfig::with_q(1.0);
    let rows = temporal_study(&mesh, &u0, 0.25, 32, 3, 64, &cfg).unwrap();
    let grid = TimeGrid::uniform(32, 0.25).unwrap();
    log.push("heat/32 steps", &run(&mesh, &grid, &u0, &cfg).unwrap().1);
    let orders: Vec<f64> = rows.iter().filter_map(|r| r.order).collect();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        orders.len() == 3 && orders.iter().all(|o| (1.7..=2.3).contains(o)) && secs < 30.0,
        format!(
            "errors {} with observed orders {} ({secs:.2}s)",
            rows.iter()
                .map(|r| format!("{:.3e}", r.error))
                .collect::<Vec<_>>()
                .join(", "),
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng, slots: usize, cells: usize) -> SpaceTimeField {
    SpaceTimeField::from_slots(
        (0..slots)
            .map(|_| (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn variable_bdf2(grid: &TimeGrid) -> MultistepOperator {
    let n = grid.steps();
    let mut rows = vec![(0, vec![-1.0 / grid.dt(1), 1.0 / grid.dt(1)])];
    for k in 2..=n {
        let (h, w) = (grid.dt(k), grid.dt(k) / grid.dt(k - 1));
        rows.push((
            k - 2,
            vec![w * w / (1.0 + w) / h, -(1.0 + w) / h, (1.0 + 2.0 * w) / (1.0 + w) / h],
        ));
    }
    MultistepOperator::build_custom(grid, rows).unwrap()
}

fn sbp_residual(mesh: &AdmissibleMesh, grid: &TimeGrid, u: &SpaceTimeField) -> f64 {
    let big_t = grid.horizon();
    let space = |p: Point| 0.7 + p[0] - 0.4 * p[0] * p[1] + 1.3 * p[1] * p[1] - p[0] * p[0];
    let time = |t: f64| (PI * t / big_t).sin().powi(2);
    let w = WeightField::ones(mesh.num_cells());
    let du = MultistepOperator::build_euler(grid).apply_delta(u).unwrap();
    let p_phi = project_space_time(mesh, grid, |p, t| space(p) * time(t));
    let first = space_time_pairing(mesh, grid, &w, &du, &p_phi).unwrap();
    let ps = project(mesh, space);
    let mut second = 0.0;
    for k in 1..=grid.steps() {
        let dphi = time(grid.time(k)) - time(grid.time(k - 1));
        second += dphi
            * mesh
                .cells()
                .iter()
                .enumerate()
                .map(|(c, cell)| cell.measure * u.slot(k)[c] * ps.get(c))
                .sum::<f64>();
    }
    (first + second).abs()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut recon: f64 = 0.0;
    let mut rowsum: f64 = 0.0;
    let mut duality: f64 = 0.0;
    let mesh = build_uniform_grid(&BoxDomain::new(&[0.0, 0.0], &[1.0, 0.5]), &[5, 3]).unwrap();
    let w = WeightField::ones(mesh.num_cells());
    for n in [1usize, 2, 3, 7, 20, 50] {
        let uniform = TimeGrid::uniform(n, 0.8).unwrap();
        let steps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.2)).collect();
        let varying = TimeGrid::from_steps(&steps).unwrap();
        let ops = [
            MultistepOperator::build_euler(&uniform),
            MultistepOperator::build_euler(&varying),
            MultistepOperator::build_bdf2_uniform(&uniform).unwrap(),
            variable_bdf2(&varying),
        ];
        for op in &ops {
            recon = recon.max(op.reconstruction_residual());
            rowsum = rowsum.max(op.row_sum_residual());
            let grid = op.grid();
            let u = random_field(&mut rng, n + 1, mesh.num_cells());
            let phi = random_field(&mut rng, n + 1, mesh.num_cells());
            let lhs = space_time_pairing(
                &mesh,
                grid,
                &w,
                &op.apply_delta(&u).unwrap(),
                &op.transform_test_vector(&phi).unwrap(),
            )
            .unwrap();
            let rhs = space_time_pairing(
                &mesh,
                grid,
                &w,
                &MultistepOperator::build_euler(grid).apply_delta(&u).unwrap(),
                &phi,
            )
            .unwrap();
            duality = duality.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
    }
    let mut sbp: f64 = 0.0;
    for (domain, counts) in [
        (BoxDomain::new(&[0.0], &[2.0]), vec![9]),
        (BoxDomain::new(&[0.0, -1.0], &[1.0, 1.0]), vec![4, 6]),
    ] {
        let m = build_uniform_grid(&domain, &counts).unwrap();
        for steps in [vec![0.1, 0.3, 0.05, 0.2], vec![0.25; 8]] {
            let grid = TimeGrid::from_steps(&steps).unwrap();
            let u = random_field(&mut rng, grid.steps() + 1, m.num_cells());
            sbp = sbp.max(sbp_residual(&m, &grid, &u));
        }
    }
    outcome(
        recon <= 1e-13 && rowsum <= 1e-13 && sbp <= 1e-10 && duality <= 1e-10,
        format!(
            "reconstruction {recon:.3e}, row sums {rowsum:.3e}, summation by parts {sbp:.3e}, duality {duality:.3e}"
        ),
    )
}

fn main() {
    let mut log = RunLog::default();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "BDF2 stability constant", criterion_1()),
        (2, "scalar inequalities", criterion_2()),
        (5, "two-cell oracle", criterion_5()),
    ];
    let (c6, c8) = criterion_6_and_8(&mut log);
    results.push((6, "Barenblatt convergence", c6));
    results.push((7, "temporal order", criterion_7(&mut log)));
    results.push((8, "weak-form identity", c8));
    results.push((9, "matrix formalism", criterion_9()));
    results.push((3, "energy estimate", energy_run(&mut log)));
    results.push((4, "mass conservation", criterion_4(&log)));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "criterion {id} ({name}): {} : {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
