use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {s} is outside the horizon [0, {horizon}]")]
    TimeOutOfRange { s: f64, horizon: f64 },

    #[error("point (x = {x}, z = {z}) lies outside the state grid")]
    OffGrid { x: f64, z: f64 },

    #[error("invalid market parameters: {0}")]
    InvalidParams(ValidationReport),

    #[error("invalid coefficient function: {0}")]
    InvalidCoefficient(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("strategy denominator (M1 + M3) * sigma_tot^2 = {value:e} is singular at s = {s}")]
    Singular { s: f64, value: f64 },

    #[error("linear solve failed at time index {step} (residual {residual:e} after {iterations} iterations)")]
    LinearSolve { step: usize, iterations: usize, residual: f64 },

    #[error("instability at time index {step}: field magnitude grew by a factor {growth:.3e} in one step")]
    Unstable { step: usize, growth: f64 },

    #[error("H-function is not strictly convex in u at s = {s}, z = {z} (curvature {curvature:e})")]
    NonConvex { s: f64, z: f64, curvature: f64 },

    #[error("policy iteration did not converge in {iterations} iterations (last sup-distance {last:e})")]
    NotConverged { iterations: usize, last: f64, trace: Vec<f64> },

    #[error("simulation produced a non-finite state on path {path}")]
    Simulation { path: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
