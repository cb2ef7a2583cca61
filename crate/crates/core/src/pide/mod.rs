//! Finite-difference solver for the coupled integro-PDEs on a square grid.

pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod policy;
pub mod solver;
pub mod sparse;

pub use grid::StateGrid2D;
pub use hamiltonian::{diagonal_curvature, h_function};
pub use policy::{improve_strategy, policy_improvement, policy_iteration, PolicyIterationResult};
pub use solver::{policy_evaluation, relative_error, PideSolution};
