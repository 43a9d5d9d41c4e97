//! Matrix representation of multistep time differentiation.
//!
//! A discrete time derivative on a grid `0 = t_0 < … < t_n = T` is written as a lower
//! triangular `(n+1)×(n+1)` matrix `M̂` acting on the time-stacked unknowns. Row 0 is
//! `(1, 0, …, 0)` and every other row annihilates constants. With
//!
//! - `M` the one-step (backward Euler) matrix, `M = T⁻¹D`,
//! - `D` the first-difference matrix, whose inverse is the lower all-ones matrix,
//! - `T = diag(1, Δt_1, …, Δt_n)`,
//!
//! the matrix `Â = T M̂ D⁻¹` has first row and column `(1, 0, …, 0)`; its trailing `n×n`
//! block `A` expresses the multistep derivative as a combination of shifted one-step
//! differences, `M̂ = T⁻¹ Â T M`. Stability of the reduction is measured by `‖A⁻¹‖₁`.
//!
//! Matrices are kept in row-profile storage (first nonzero column plus the dense tail up to
//! the diagonal), so the built rules stay banded and custom rules may be dense.

use std::fmt;

use thiserror::Error;

use crate::discrete_ops::SpaceTimeField;

#[derive(Debug, Error, PartialEq)]
pub enum TimeError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("rule requires a uniform grid (step ratio spread {0:e})")]
    NonUniformGrid(f64),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("singular matrix: zero diagonal at row {0}")]
    Singular(usize),
    #[error("field has {got} time slots, operator expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Subdivision `0 = t_0 < t_1 < … < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, TimeError> {
        if times.len() < 2 {
            return Err(TimeError::InvalidGrid("need at least one step".into()));
        }
        if times[0] != 0.0 {
            return Err(TimeError::InvalidGrid(format!("t_0 must be 0, got {}", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(TimeError::InvalidGrid(format!(
                "times not increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    pub fn uniform(n: usize, horizon: f64) -> Result<Self, TimeError> {
        if n == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(TimeError::InvalidGrid(format!("n = {n}, T = {horizon}")));
        }
        Self::new(
            (0..=n)
                .map(|k| if k == n { horizon } else { horizon * k as f64 / n as f64 })
                .collect(),
        )
    }

    /// Builds a grid from step sizes `Δt_1, …, Δt_n`.
    pub fn from_steps(steps: &[f64]) -> Result<Self, TimeError> {
        let mut times = Vec::with_capacity(steps.len() + 1);
        times.push(0.0);
        let mut t = 0.0;
        for &dt in steps {
            t += dt;
            times.push(t);
        }
        Self::new(times)
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `Δt_k = t_k − t_{k−1}` for `k ∈ 1..=n`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k] - self.times[k - 1]
    }

    pub fn max_dt(&self) -> f64 {
        (1..=self.steps()).map(|k| self.dt(k)).fold(0.0, f64::max)
    }

    /// Relative spread `(max Δt − min Δt) / max Δt`.
    pub fn step_spread(&self) -> f64 {
        let max = self.max_dt();
        let min = (1..=self.steps()).map(|k| self.dt(k)).fold(f64::INFINITY, f64::min);
        (max - min) / max
    }

    pub fn is_uniform(&self) -> bool {
        self.step_spread() <= 1e-12
    }
}

/// Lower-triangular matrix in row-profile storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    /// Row `i` stores columns `start..=i`.
    rows: Vec<(usize, Vec<f64>)>,
}

impl LowerTriangular {
    pub fn from_rows(rows: Vec<(usize, Vec<f64>)>) -> Result<Self, TimeError> {
        for (i, (start, vals)) in rows.iter().enumerate() {
            if vals.is_empty() || start + vals.len() != i + 1 {
                return Err(TimeError::InvalidRule(format!(
                    "row {i} must end on the diagonal (start {start}, {} entries)",
                    vals.len()
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| (i, vec![1.0])).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (start, vals) = &self.rows[i];
        if j < *start || j > i {
            0.0
        } else {
            vals[j - start]
        }
    }

    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.rows[i].0, &self.rows[i].1)
    }

    /// Widest row profile minus one (0 for diagonal matrices).
    pub fn bandwidth(&self) -> usize {
        self.rows.iter().map(|(_, v)| v.len() - 1).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(start, vals)| vals.iter().zip(&x[*start..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Solves `L x = b` by forward substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, TimeError> {
        let mut x = vec![0.0; b.len()];
        for (i, (start, vals)) in self.rows.iter().enumerate() {
            let diag = vals[vals.len() - 1];
            if diag == 0.0 {
                return Err(TimeError::Singular(i));
            }
            let s: f64 = vals[..vals.len() - 1]
                .iter()
                .zip(&x[*start..i])
                .map(|(a, b)| a * b)
                .sum();
            x[i] = (b[i] - s) / diag;
        }
        Ok(x)
    }

    /// `‖L⁻¹‖₁`, the largest column sum of `|L⁻¹|`, by solving for each unit column.
    pub fn inverse_norm1(&self) -> Result<f64, TimeError> {
        let n = self.dim();
        let mut best: f64 = 0.0;
        let mut x = vec![0.0; n];
        for j in 0..n {
            x.iter_mut().for_each(|v| *v = 0.0);
            for i in j..n {
                let (start, vals) = &self.rows[i];
                let diag = vals[vals.len() - 1];
                if diag == 0.0 {
                    return Err(TimeError::Singular(i));
                }
                let rhs = if i == j { 1.0 } else { 0.0 };
                let lo = (*start).max(j);
                let s: f64 = (lo..i).map(|l| vals[l - start] * x[l]).sum();
                x[i] = (rhs - s) / diag;
            }
            best = best.max(x[j..].iter().map(|v| v.abs()).sum());
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Euler,
    Bdf2,
    Custom,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Euler => "euler",
            Rule::Bdf2 => "bdf2",
            Rule::Custom => "custom",
        })
    }
}

/// The matrix bundle `(M̂, Â, A)` of a multistep time-differentiation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepOperator {
    grid: TimeGrid,
    mhat: LowerTriangular,
    ahat: LowerTriangular,
    rule: Rule,
}

impl MultistepOperator {
    /// One-step backward differences: `M̂ = M`, `A = I`.
    pub fn build_euler(grid: &TimeGrid) -> Self {
        let rows = std::iter::once((0, vec![1.0]))
            .chain((1..=grid.steps()).map(|k| {
                let inv = 1.0 / grid.dt(k);
                (k - 1, vec![-inv, inv])
            }))
            .collect();
        Self::from_mhat(grid, LowerTriangular { rows }, Rule::Euler).expect("euler rows are well formed")
    }

    /// BDF2 on a uniform grid, started with one implicit Euler step.
    pub fn build_bdf2_uniform(grid: &TimeGrid) -> Result<Self, TimeError> {
        if !grid.is_uniform() {
            return Err(TimeError::NonUniformGrid(grid.step_spread()));
        }
        let mut rows = vec![(0, vec![1.0])];
        for k in 1..=grid.steps() {
            let inv = 1.0 / grid.dt(k);
            if k == 1 {
                rows.push((0, vec![-inv, inv]));
            } else {
                rows.push((k - 2, vec![0.5 * inv, -2.0 * inv, 1.5 * inv]));
            }
        }
        Self::from_mhat(grid, LowerTriangular { rows }, Rule::Bdf2)
    }

    /// Custom rule from the rows `k = 1..=n` of `M̂`; each row is `(first column, entries
    /// up to and including the diagonal)`. Row 0 is fixed to `(1, 0, …, 0)`.
    pub fn build_custom(grid: &TimeGrid, rows: Vec<(usize, Vec<f64>)>) -> Result<Self, TimeError> {
        if rows.len() != grid.steps() {
            return Err(TimeError::InvalidRule(format!(
                "expected {} rows, got {}",
                grid.steps(),
                rows.len()
            )));
        }
        let mut all = vec![(0, vec![1.0])];
        all.extend(rows);
        let mhat = LowerTriangular::from_rows(all)?;
        for k in 1..mhat.dim() {
            let (_, vals) = mhat.row(k);
            let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let sum: f64 = vals.iter().sum();
            if sum.abs() > 1e-12 * scale {
                return Err(TimeError::InvalidRule(format!(
                    "row {k} does not annihilate constants (row sum {sum:e})"
                )));
            }
        }
        Self::from_mhat(grid, mhat, Rule::Custom)
    }

    fn from_mhat(grid: &TimeGrid, mhat: LowerTriangular, rule: Rule) -> Result<Self, TimeError> {
        for i in 0..mhat.dim() {
            if mhat.get(i, i) == 0.0 {
                return Err(TimeError::Singular(i));
            }
        }
        // Â = T M̂ D⁻¹: entry (k, j) is Δt_k times the suffix sum of row k from column j.
        let ahat_rows = (0..mhat.dim())
            .map(|k| {
                let (start, vals) = mhat.row(k);
                let scale = if k == 0 { 1.0 } else { grid.dt(k) };
                let mut suffix = vec![0.0; vals.len()];
                let mut acc = 0.0;
                for idx in (0..vals.len()).rev() {
                    acc += vals[idx];
                    suffix[idx] = scale * acc;
                }
                (start, suffix)
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            mhat,
            ahat: LowerTriangular { rows: ahat_rows },
            rule,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    /// `M̂`.
    pub fn mhat(&self) -> &LowerTriangular {
        &self.mhat
    }

    /// `Â = T M̂ D⁻¹`.
    pub fn ahat(&self) -> &LowerTriangular {
        &self.ahat
    }

    /// The trailing `n×n` block `A` of `Â`.
    pub fn a(&self) -> LowerTriangular {
        let rows = (1..self.ahat.dim())
            .map(|k| {
                let (start, vals) = self.ahat.row(k);
                if start == 0 {
                    (0, vals[1..].to_vec())
                } else {
                    (start - 1, vals.to_vec())
                }
            })
            .collect();
        LowerTriangular { rows }
    }

    /// Largest `|Â_{k,0}|` over `k ≥ 1` together with `|Â_{0,0} − 1|`.
    pub fn first_column_residual(&self) -> f64 {
        let mut r = (self.ahat.get(0, 0) - 1.0).abs();
        for k in 1..self.ahat.dim() {
            r = r.max(self.ahat.get(k, 0).abs());
        }
        r
    }

    /// Largest `|Σ_ℓ M̂_{k,ℓ}|` over `k ≥ 1`, relative to the row magnitude.
    pub fn row_sum_residual(&self) -> f64 {
        (1..self.mhat.dim())
            .map(|k| {
                let (_, vals) = self.mhat.row(k);
                let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
                vals.iter().sum::<f64>().abs() / scale
            })
            .fold(0.0, f64::max)
    }

    /// Rebuilds `M̂` as `T⁻¹ Â T M` and returns the largest entrywise deviation, relative
    /// to the largest entry of `M̂`.
    pub fn reconstruction_residual(&self) -> f64 {
        let n1 = self.mhat.dim();
        let dt = |k: usize| if k == 0 { 1.0 } else { self.grid.dt(k) };
        let euler = MultistepOperator::build_euler(&self.grid);
        // (T M)_{ℓ,j} is the first-difference matrix D.
        let tm = |l: usize, j: usize| euler.mhat.get(l, j) * dt(l);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..n1 {
            let (start, avals) = self.ahat.row(k);
            for j in 0..=k {
                let mut s = 0.0;
                for (idx, a) in avals.iter().enumerate() {
                    let l = start + idx;
                    if l >= j && l <= j + 1 {
                        s += a * tm(l, j);
                    }
                }
                let rebuilt = s / dt(k);
                let orig = self.mhat.get(k, j);
                scale = scale.max(orig.abs());
                worst = worst.max((rebuilt - orig).abs());
            }
        }
        worst / scale
    }

    /// `‖A⁻¹‖₁`.
    pub fn inverse_norm1(&self) -> Result<f64, TimeError> {
        self.a().inverse_norm1()
    }

    /// Applies `M̂` to a field: slot 0 returns `u⁰`, slot `k ≥ 1` the derivative value on
    /// `(t_{k−1}, t_k]`.
    pub fn apply_delta(&self, field: &SpaceTimeField) -> Result<SpaceTimeField, TimeError> {
        self.check_shape(field)?;
        Ok(apply_rows(&self.mhat, field))
    }

    /// `φ̂ = (Â⁻¹)ᵀ φ`, the test-function transform that turns the multistep pairing into
    /// the one-step one.
    pub fn transform_test_vector(&self, phi: &SpaceTimeField) -> Result<SpaceTimeField, TimeError> {
        self.check_shape(phi)?;
        let n1 = self.ahat.dim();
        let m = phi.num_cells();
        let mut out = phi.clone();
        // backward substitution with Âᵀ (upper triangular)
        for k in (0..n1).rev() {
            let diag = self.ahat.get(k, k);
            if diag == 0.0 {
                return Err(TimeError::Singular(k));
            }
            let mut acc = phi.slot(k).to_vec();
            for i in k + 1..n1 {
                let a = self.ahat.get(i, k);
                if a != 0.0 {
                    let hat_i = out.slot(i);
                    for c in 0..m {
                        acc[c] -= a * hat_i[c];
                    }
                }
            }
            for (dst, v) in out.slot_mut(k).iter_mut().zip(acc) {
                *dst = v / diag;
            }
        }
        Ok(out)
    }

    fn check_shape(&self, field: &SpaceTimeField) -> Result<(), TimeError> {
        let expected = self.grid.steps() + 1;
        if field.num_slots() != expected {
            return Err(TimeError::ShapeMismatch {
                expected,
                got: field.num_slots(),
            });
        }
        Ok(())
    }
}

fn apply_rows(mat: &LowerTriangular, field: &SpaceTimeField) -> SpaceTimeField {
    let mut out = field.clone();
    let m = field.num_cells();
    for k in 0..mat.dim() {
        let (start, vals) = mat.row(k);
        let dst = out.slot_mut(k);
        dst.iter_mut().for_each(|v| *v = 0.0);
        for (idx, a) in vals.iter().enumerate() {
            let src = field.slot(start + idx);
            for c in 0..m {
                dst[c] += a * src[c];
            }
        }
    }
    out
}

/// Result of the `(A_t)` stability check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    pub norm: f64,
    pub pass: bool,
}

/// Computes `‖A⁻¹‖₁` and compares it with `threshold`.
pub fn check_at(op: &MultistepOperator, threshold: f64) -> Result<StabilityCheck, TimeError> {
    let norm = op.inverse_norm1()?;
    Ok(StabilityCheck {
        norm,
        pass: norm <= threshold,
    })
}

/// `(3/2)(1 − 3⁻ⁿ)`, the value of `‖A⁻¹‖₁` for uniform BDF2 with `n` steps.
pub fn bdf2_inverse_norm_closed_form(n: usize) -> f64 {
    1.5 * (1.0 - 3f64.powi(-(n as i32)))
}

/// One row of a norm table: `n,rule,norm1_Ainv,pass`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub n: usize,
    pub rule: Rule,
    pub norm: f64,
    pub pass: bool,
}

/// `‖A⁻¹‖₁` for uniform BDF2 at each `n` in `ns` against `threshold`.
pub fn bdf2_norm_table(ns: &[usize], threshold: f64) -> Result<Vec<NormRow>, TimeError> {
    ns.iter()
        .map(|&n| {
            let grid = TimeGrid::uniform(n, 1.0)?;
            let op = MultistepOperator::build_bdf2_uniform(&grid)?;
            let c = check_at(&op, threshold)?;
            Ok(NormRow {
                n,
                rule: Rule::Bdf2,
                norm: c.norm,
                pass: c.pass,
            })
        })
        .collect()
}
