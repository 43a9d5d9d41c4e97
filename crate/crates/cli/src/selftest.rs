//! Invariant battery behind `pmefv selftest`.

use std::fs::File;
use std::path::Path;

use pmefv::discrete_ops::CellVector;
use pmefv::io::write_norm_table;
use pmefv::mesh::{build_uniform_grid, validate_admissible, BoxDomain};
use pmefv::monotone_graph::{bdf2_multiplier_gap, cs_gap, cs_gap_scale, psi, MonotoneGraph, PowerLaw};
use pmefv::solver::{self, step_euler, SolverConfig};
use pmefv::time_algebra::{bdf2_inverse_norm_closed_form, bdf2_norm_table, MultistepOperator, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn norm_table(out: Option<&Path>) -> Check {
    let rows = match bdf2_norm_table(&[1, 5, 10, 50], 1.5 * (1.0 + 1e-12)) {
        Ok(rows) => rows,
        Err(e) => {
            return Check {
                name: "BDF2 norm table",
                pass: false,
                detail: e.to_string(),
            }
        }
    };
    let mut worst: f64 = 0.0;
    for r in &rows {
        let exact = bdf2_inverse_norm_closed_form(r.n);
        worst = worst.max((r.norm - exact).abs());
        println!(
            "  n = {:>2}  ‖A⁻¹‖₁ = {:.17}  (3/2)(1−3⁻ⁿ) = {:.17}",
            r.n, r.norm, exact
        );
    }
    let mut detail = format!("max deviation {worst:.3e}");
    let mut pass = worst <= 1e-12 && rows.iter().all(|r| r.pass);
    if let Some(dir) = out {
        let path = dir.join("norm_table.csv");
        let written = std::fs::create_dir_all(dir)
            .map_err(|e| e.to_string())
            .and_then(|()| File::create(&path).map_err(|e| e.to_string()))
            .and_then(|f| write_norm_table(&rows, f).map_err(|e| e.to_string()));
        match written {
            Ok(()) => detail.push_str(&format!(", wrote {}", path.display())),
            Err(e) => {
                pass = false;
                detail.push_str(&format!(", cannot write {}: {e}", path.display()));
            }
        }
    }
    Check {
        name: "BDF2 norm table",
        pass,
        detail,
    }
}

fn scalar_inequalities(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut min_gap = f64::INFINITY;
    for q in [1.5, 2.0, 3.0] {
        for _ in 0..20_000 {
            let (a, b) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            min_gap = min_gap.min(cs_gap(a, b, q) / cs_gap_scale(a, b, q));
        }
    }
    let mut multiplier: f64 = 0.0;
    for _ in 0..20_000 {
        let (a, b, c) = (
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
        );
        let gap = bdf2_multiplier_gap(a, b, c);
        multiplier = multiplier.max((gap - 0.25 * (a - 2.0 * b + c).powi(2)).abs() / (1.0 + a * a + b * b + c * c));
    }
    let graph = MonotoneGraph::power(PowerLaw::new(2.0).expect("valid exponent"));
    let mut expansive = 0;
    for _ in 0..5_000 {
        let lambda = rng.gen_range(0.01..10.0);
        let (y1, y2) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        match (graph.resolvent(lambda, y1), graph.resolvent(lambda, y2)) {
            (Ok(x1), Ok(x2)) if (x1 - x2).abs() <= (y1 - y2).abs() * (1.0 + 1e-12) + 1e-14 => {}
            _ => expansive += 1,
        }
    }
    vec![
        Check {
            name: "Cauchy-Schwarz gap sweep",
            pass: min_gap >= -1e-13,
            detail: format!("min gap/scale {min_gap:.3e} over 60000 pairs"),
        },
        Check {
            name: "BDF2 multiplier identity",
            pass: multiplier <= 1e-13,
            detail: format!("max relative deviation {multiplier:.3e}"),
        },
        Check {
            name: "resolvent non-expansiveness",
            pass: expansive == 0,
            detail: format!("{expansive} expansive pairs out of 5000"),
        },
    ]
}

fn bisect(g: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
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

fn two_cell_oracle(rng: &mut ChaCha8Rng) -> Check {
    let mesh = build_uniform_grid(&BoxDomain::unit(2), &[2, 1]).expect("two-cell mesh");
    let (m, tau) = (0.5, 2.0);
    let mut worst: f64 = 0.0;
    let mut failure = None;
    for q in [2.0, 3.0] {
        let cfg = SolverConfig {
            tolerance: 1e-13,
            ..SolverConfig::with_q(q)
        };
        for _ in 0..10 {
            let u0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let dt = rng.gen_range(0.01..1.0);
            match step_euler(&mesh, &CellVector::new(u0.to_vec()).expect("finite"), dt, &cfg) {
                Ok((u1, _)) => {
                    let s = u0[0] + u0[1];
                    let x = bisect(|x| m * (x - u0[0]) / dt + tau * (psi(x, q) - psi(s - x, q)));
                    worst = worst.max((u1.get(0) - x).abs()).max((u1.get(1) - (s - x)).abs());
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
    }
    Check {
        name: "two-cell oracle",
        pass: failure.is_none() && worst <= 1e-10,
        detail: failure.unwrap_or_else(|| format!("max deviation {worst:.3e} over 20 Euler steps")),
    }
}

fn matrix_structure() -> Check {
    let mut worst: f64 = 0.0;
    for n in [1usize, 4, 17] {
        let grid = TimeGrid::uniform(n, 1.0).expect("uniform grid");
        let bdf2 = MultistepOperator::build_bdf2_uniform(&grid).expect("uniform BDF2");
        for op in [MultistepOperator::build_euler(&grid), bdf2] {
            worst = worst
                .max(op.reconstruction_residual())
                .max(op.row_sum_residual())
                .max(op.first_column_residual());
        }
    }
    Check {
        name: "multistep matrix structure",
        pass: worst <= 1e-13,
        detail: format!("max reconstruction/row-sum residual {worst:.3e}"),
    }
}

fn end_to_end() -> Vec<Check> {
    let domain = BoxDomain::new(&[0.0, 0.0], &[1.0, 1.0]);
    let mesh = build_uniform_grid(&domain, &[12, 12]).expect("grid");
    let report = validate_admissible(&mesh);
    let mesh_check = Check {
        name: "admissibility of a 12x12 grid",
        pass: report.passed(),
        detail: format!("h = {:.3e}, rho = {:.3e}", report.h, report.rho),
    };
    let u0 = solver::discretize_initial(&mesh, |p| {
        if (p[0] - 0.5).abs() < 0.25 && (p[1] - 0.5).abs() < 0.25 {
            1.0
        } else {
            0.0
        }
    });
    let grid = TimeGrid::uniform(10, 0.05).expect("grid");
    let run = match solver::run(&mesh, &grid, &u0, &SolverConfig::with_q(2.0)) {
        Ok((_, report)) => Check {
            name: "box run mass and energy",
            pass: report.violations.is_empty(),
            detail: format!(
                "mass drift {:.3e}, min energy slack {:.3e}",
                report.max_mass_drift(),
                report.min_energy_slack()
            ),
        },
        Err(e) => Check {
            name: "box run mass and energy",
            pass: false,
            detail: e.to_string(),
        },
    };
    vec![mesh_check, run]
}

/// Runs every check, printing one line each; the error lists the failed checks.
pub fn run(out: Option<&Path>) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checks = vec![norm_table(out)];
    checks.extend(scalar_inequalities(&mut rng));
    checks.push(two_cell_oracle(&mut rng));
    checks.push(matrix_structure());
    checks.extend(end_to_end());
    for c in &checks {
        println!("{} {:<32} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    println!(
        "selftest: {} passed, {} failed",
        checks.len() - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("failed checks: {}", failed.join(", ")))
    }
}
