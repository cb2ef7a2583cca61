//! Policy improvement by diagonal minimisation of the H-function, and the
//! policy iteration built on it.

use super::grid::StateGrid2D;
use super::hamiltonian::h_function;
use super::solver::{policy_evaluation, PideSolution};
use crate::coeff::CoefficientFn;
use crate::error::{Error, Result};
use crate::model::{LinearStrategy, MarketParams};

/// Half-width of the three-point parabola used to locate the minimiser.
const PROBE: f64 = 1.0;

/// New coefficient `alpha(s)` at one time node of `sol`.
///
/// At every interior diagonal node `x = z` the map `u -> H(s, z, s, z, z, u)`
/// is minimised through a three-point parabola around the current action;
/// the minimisers are then fitted by least squares to `alpha z`.
pub fn policy_improvement(params: &MarketParams, sol: &PideSolution, s: f64) -> Result<f64> {
    let grid = &sol.grid;
    let n = grid.n_space();
    let current = sol.strategy.coefficient(s);
    let (mut szu, mut szz) = (0.0, 0.0);
    for j in 1..n - 1 {
        let z = grid.node(j);
        let u0 = current * z;
        let h = |u: f64| h_function(params, sol, s, z, s, z, z, u);
        let (hm, h0, hp) = (h(u0 - PROBE)?, h(u0)?, h(u0 + PROBE)?);
        let curvature = (hp - 2.0 * h0 + hm) / (PROBE * PROBE);
        if !(curvature > 0.0) {
            return Err(Error::NonConvex { s, z, curvature });
        }
        let u_star = u0 - (hp - hm) / (2.0 * PROBE * curvature);
        szu += z * u_star;
        szz += z * z;
    }
    Ok(szu / szz)
}

/// Improved strategy sampled at every time node of the grid.
pub fn improve_strategy(params: &MarketParams, sol: &PideSolution) -> Result<LinearStrategy> {
    let grid = &sol.grid;
    let alpha = (0..=grid.n_time())
        .map(|k| policy_improvement(params, sol, grid.time(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearStrategy::new(CoefficientFn::from_samples(grid.horizon(), alpha)?))
}

#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub strategy: LinearStrategy,
    pub solution: PideSolution,
    /// `sup_s |alpha_{k+1}(s) - alpha_k(s)|` for each iteration.
    pub trace: Vec<f64>,
}

impl PolicyIterationResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

fn sup_distance(a: &LinearStrategy, b: &LinearStrategy, grid: &StateGrid2D) -> f64 {
    (0..=grid.n_time())
        .map(|k| {
            let s = grid.time(k);
            (a.coefficient(s) - b.coefficient(s)).abs()
        })
        .fold(0.0, f64::max)
}

/// Alternates evaluation and improvement from `alpha = 0` until successive
/// strategies are within `tol` in sup norm.
pub fn policy_iteration(params: &MarketParams, grid: &StateGrid2D, max_iters: usize, tol: f64) -> Result<PolicyIterationResult> {
    let mut strategy = LinearStrategy::zero(params.horizon());
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let sol = policy_evaluation(params, &strategy, grid)?;
        let next = improve_strategy(params, &sol)?;
        let d = sup_distance(&next, &strategy, grid);
        trace.push(d);
        strategy = next;
        if d <= tol {
            let solution = policy_evaluation(params, &strategy, grid)?;
            return Ok(PolicyIterationResult { strategy, solution, trace });
        }
    }
    Err(Error::NotConverged { iterations: max_iters, last: trace.last().copied().unwrap_or(f64::NAN), trace })
}
