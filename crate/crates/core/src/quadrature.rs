//! Cell quadrature rules.
//!
//! Intervals and axis-aligned rectangles use 3-point Gauss–Legendre (tensor) rules, exact
//! for polynomials of degree 5 in each variable. General convex polygons are split into a
//! fan of triangles around the vertex average, each refined uniformly and integrated with
//! the edge-midpoint rule (exact for degree 2 on every subtriangle).

use crate::mesh::{CellShape, Point};

const GAUSS3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Refinement levels for the polygon rule (each level splits a triangle in four).
const POLYGON_REFINEMENT: u32 = 2;

fn gauss_1d(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GAUSS3_NODES
        .iter()
        .zip(GAUSS3_WEIGHTS)
        .map(move |(x, w)| (mid + half * x, half * w))
}

/// Quadrature nodes and weights for a cell; weights add up to the cell measure.
pub fn cell_rule(shape: &CellShape) -> Vec<(Point, f64)> {
    match shape {
        CellShape::Interval { a, b } => gauss_1d(*a, *b).map(|(x, w)| ([x, 0.0], w)).collect(),
        CellShape::Polygon(v) => {
            if let Some((lo, hi)) = shape.as_box() {
                let mut out = Vec::with_capacity(9);
                for (y, wy) in gauss_1d(lo[1], hi[1]) {
                    for (x, wx) in gauss_1d(lo[0], hi[0]) {
                        out.push(([x, y], wx * wy));
                    }
                }
                return out;
            }
            let n = v.len() as f64;
            let c = [
                v.iter().map(|p| p[0]).sum::<f64>() / n,
                v.iter().map(|p| p[1]).sum::<f64>() / n,
            ];
            let mut out = Vec::new();
            for i in 0..v.len() {
                let tri = [c, v[i], v[(i + 1) % v.len()]];
                refine_triangle(tri, POLYGON_REFINEMENT, &mut out);
            }
            out
        }
    }
}

/// Like [`cell_rule`] but with `level` extra subdivisions, for integrands that are only
/// piecewise smooth inside the cell.
pub fn cell_rule_refined(shape: &CellShape, level: u32) -> Vec<(Point, f64)> {
    match shape {
        CellShape::Interval { a, b } => {
            let parts = 1usize << level;
            let w = (b - a) / parts as f64;
            (0..parts)
                .flat_map(|i| gauss_1d(a + i as f64 * w, a + (i + 1) as f64 * w))
                .map(|(x, w)| ([x, 0.0], w))
                .collect()
        }
        CellShape::Polygon(v) => {
            let n = v.len() as f64;
            let c = [
                v.iter().map(|p| p[0]).sum::<f64>() / n,
                v.iter().map(|p| p[1]).sum::<f64>() / n,
            ];
            let mut out = Vec::new();
            for i in 0..v.len() {
                refine_triangle([c, v[i], v[(i + 1) % v.len()]], level, &mut out);
            }
            out
        }
    }
}

fn refine_triangle(t: [Point; 3], level: u32, out: &mut Vec<(Point, f64)>) {
    let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (m01, m12, m20) = (mid(t[0], t[1]), mid(t[1], t[2]), mid(t[2], t[0]));
    if level == 0 {
        let area = 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs();
        for p in [m01, m12, m20] {
            out.push((p, area / 3.0));
        }
        return;
    }
    refine_triangle([t[0], m01, m20], level - 1, out);
    refine_triangle([m01, t[1], m12], level - 1, out);
    refine_triangle([m20, m12, t[2]], level - 1, out);
    refine_triangle([m01, m12, m20], level - 1, out);
}

pub fn cell_integral(shape: &CellShape, f: impl Fn(Point) -> f64) -> f64 {
    cell_rule(shape).into_iter().map(|(p, w)| w * f(p)).sum()
}

pub fn cell_average(shape: &CellShape, f: impl Fn(Point) -> f64) -> f64 {
    cell_integral(shape, f) / shape.measure()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_exact_for_quartic() {
        let s = CellShape::Interval { a: 0.2, b: 1.7 };
        let exact = (1.7f64.powi(5) - 0.2f64.powi(5)) / 5.0;
        assert_relative_eq!(cell_integral(&s, |p| p[0].powi(4)), exact, max_relative = 1e-14);
    }

    #[test]
    fn rectangle_exact_for_tensor_quartic() {
        let s = CellShape::Polygon(vec![[0.0, 1.0], [2.0, 1.0], [2.0, 3.0], [0.0, 3.0]]);
        let exact = (32.0 / 5.0) * ((81.0 - 1.0) / 4.0);
        assert_relative_eq!(
            cell_integral(&s, |p| p[0].powi(4) * p[1].powi(3)),
            exact,
            max_relative = 1e-14
        );
    }

    #[test]
    fn polygon_exact_for_quadratics() {
        let s = CellShape::Polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        // ∫_T x y = 1/24, ∫_T x² = 1/12
        assert_relative_eq!(cell_integral(&s, |p| p[0] * p[1]), 1.0 / 24.0, max_relative = 1e-14);
        assert_relative_eq!(cell_integral(&s, |p| p[0] * p[0]), 1.0 / 12.0, max_relative = 1e-14);
        let w: f64 = cell_rule(&s).iter().map(|(_, w)| w).sum();
        assert_relative_eq!(w, 0.5, max_relative = 1e-14);
    }
}
