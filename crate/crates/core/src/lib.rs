//! Finite-volume toolkit for the porous medium equation
//! `∂t u − Δ(|u|^{q−1}u) = 0` with zero-flux boundary conditions.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: admissible (orthogonal) meshes, builders, the text loader and validation.
//! - [`discrete_ops`]: piecewise-constant reconstruction, diamond gradient, cell-average
//!   projection, discrete norms and space-translate probes.
//! - [`time_algebra`]: lower-triangular matrix representation of multistep time
//!   differentiation (Euler, uniform BDF2, custom rules) and the stability constant
//!   `‖A⁻¹‖₁`.
//! - [`monotone_graph`]: maximal monotone graphs, resolvents, the power law `ψ` and its
//!   Kirchhoff transform `φ`.
//! - [`solver`]: the implicit Euler + BDF2 two-point flux scheme with Newton and a monotone
//!   fallback, energy and flux monitors, and the discrete weak-form identity.
//! - [`convergence`]: reference solutions, refinement studies and compactness probes.
//! - [`io`]: run configuration files and CSV output.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
pub mod discrete_ops;
pub mod io;
pub mod mesh;
pub mod monotone_graph;
pub mod quadrature;
pub mod solver;
pub mod time_algebra;

mod linalg;

pub use discrete_ops::{CellVector, DiamondField, SpaceTimeField, WeightField};
pub use mesh::{AdmissibleMesh, BoxDomain, ValidationReport};
pub use monotone_graph::{MonotoneGraph, PowerLaw};
pub use solver::{RunReport, SolverConfig};
pub use time_algebra::{MultistepOperator, TimeGrid};
