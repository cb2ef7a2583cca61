//! Policy evaluation: backward IMEX time stepping of the coupled integro-PDEs
//! for `theta` and `g` under a fixed linear strategy.

use rayon::prelude::*;

use super::grid::StateGrid2D;
use super::sparse::{bicgstab, CsrBuilder};
use crate::error::{Error, Result};
use crate::fields::{FieldDerivatives, ValueFields};
use crate::model::{LinearStrategy, MarketParams};

const SOLVE_TOL: f64 = 1e-12;
const SOLVE_MAX_ITER: usize = 1000;
const BLOW_UP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct PideSolution {
    pub grid: StateGrid2D,
    pub strategy: LinearStrategy,
    /// `theta[k][grid.index(i, j)]` at time node `k`.
    pub theta: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

/// Weights standing in for logical node `k` in `-1..=n`: the node itself, or
/// quadratic extrapolation `3 f_0 - 3 f_1 + f_2` for a ghost node.
fn ghost(k: isize, n: usize) -> ([usize; 3], [f64; 3], usize) {
    if k < 0 {
        ([0, 1, 2], [3.0, -3.0, 1.0], 3)
    } else if k as usize >= n {
        ([n - 1, n - 2, n - 3], [3.0, -3.0, 1.0], 3)
    } else {
        ([k as usize, 0, 0], [1.0, 0.0, 0.0], 1)
    }
}

/// Calls `f(flat_index, weight)` for every node behind the logical node
/// `(i + a, j + b)`.
fn expand(grid: &StateGrid2D, i: usize, j: usize, a: isize, b: isize, w: f64, f: &mut impl FnMut(usize, f64)) {
    let n = grid.n_space();
    let (xi, xw, xl) = ghost(i as isize + a, n);
    let (zj, zw, zl) = ghost(j as isize + b, n);
    for p in 0..xl {
        for q in 0..zl {
            f(grid.index(xi[p], zj[q]), w * xw[p] * zw[q]);
        }
    }
}

/// 3x3 stencil `[a + 1][b + 1]` of the drift and pure second-derivative
/// part of the generator at one node. The cross term is added by
/// [`add_cross`].
fn local_stencil(h: f64, drift_x: f64, drift_z: f64, diff: f64) -> [[f64; 3]; 3] {
    let d1 = [-0.5 / h, 0.0, 0.5 / h];
    let d2 = [1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)];
    let mut st = [[0.0; 3]; 3];
    for a in 0..3 {
        st[a][1] += drift_x * d1[a] + diff * d2[a];
        st[1][a] += drift_z * d1[a] + diff * d2[a];
    }
    st
}

/// Adds `w * f_xz` at node `(i, j)`. Edges use the ghost-extended central
/// formula; at a corner both ghosts would pile weight `9 / (4 h^2)` onto the
/// node itself, so the cross difference is taken one cell inward instead,
/// which is still exact for quadratics.
fn add_cross(grid: &StateGrid2D, i: usize, j: usize, w: f64, mut f: impl FnMut(usize, f64)) {
    let n = grid.n_space();
    let h = grid.h();
    let edge = |k: usize| k == 0 || k == n - 1;
    let c = w / (4.0 * h * h);
    if edge(i) && edge(j) {
        let (ci, cj) = (i.clamp(1, n - 2), j.clamp(1, n - 2));
        f(grid.index(ci + 1, cj + 1), c);
        f(grid.index(ci + 1, cj - 1), -c);
        f(grid.index(ci - 1, cj + 1), -c);
        f(grid.index(ci - 1, cj - 1), c);
    } else {
        for (a, sa) in [(-1isize, -1.0), (1, 1.0)] {
            for (b, sb) in [(-1isize, -1.0), (1, 1.0)] {
                expand(grid, i, j, a, b, c * sa * sb, &mut f);
            }
        }
    }
}

/// Applies a 3x3 stencil at node `(i, j)` with ghost extrapolation.
fn apply(grid: &StateGrid2D, field: &[f64], i: usize, j: usize, st: &[[f64; 3]; 3]) -> f64 {
    let mut acc = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            if st[a][b] != 0.0 {
                expand(grid, i, j, a as isize - 1, b as isize - 1, st[a][b], &mut |c, w| acc += w * field[c]);
            }
        }
    }
    acc
}

/// First derivatives at a node: central inside, second-order one-sided on
/// the boundary.
fn node_gradient(grid: &StateGrid2D, field: &[f64], i: usize, j: usize) -> (f64, f64) {
    let h = grid.h();
    let dx = local_stencil(h, 1.0, 0.0, 0.0);
    let dz = local_stencil(h, 0.0, 1.0, 0.0);
    (apply(grid, field, i, j, &dx), apply(grid, field, i, j, &dz))
}

/// Lagrange basis on local nodes `0, 1, 2` at coordinate `xi`, with first
/// and second derivatives per unit spacing.
fn quad_basis(xi: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    (
        [0.5 * (xi - 1.0) * (xi - 2.0), -xi * (xi - 2.0), 0.5 * xi * (xi - 1.0)],
        [xi - 1.5, 2.0 - 2.0 * xi, xi - 0.5],
        [1.0, -2.0, 1.0],
    )
}

/// Value and derivatives of the tensor-quadratic interpolant through the
/// 3x3 node block nearest to `(x, z)`. Outside the grid the edge block is
/// extrapolated.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Local {
    pub v: f64,
    pub x: f64,
    pub z: f64,
    pub xx: f64,
    pub xz: f64,
    pub xxz: f64,
}

pub(crate) fn local_quad(grid: &StateGrid2D, field: &[f64], x: f64, z: f64) -> Local {
    let n = grid.n_space();
    let h = grid.h();
    let window = |pos: f64| (pos.round().clamp(1.0, (n - 2) as f64) as usize) - 1;
    let (px, pz) = (grid.position(x), grid.position(z));
    let (i0, j0) = (window(px), window(pz));
    let (bx, dbx, ddbx) = quad_basis(px - i0 as f64);
    let (bz, dbz, _) = quad_basis(pz - j0 as f64);
    let mut out = Local::default();
    for a in 0..3 {
        for b in 0..3 {
            let f = field[grid.index(i0 + a, j0 + b)];
            out.v += bx[a] * bz[b] * f;
            out.x += dbx[a] * bz[b] * f;
            out.z += bx[a] * dbz[b] * f;
            out.xx += ddbx[a] * bz[b] * f;
            out.xz += dbx[a] * dbz[b] * f;
            out.xxz += ddbx[a] * dbz[b] * f;
        }
    }
    out.x /= h;
    out.z /= h;
    out.xx /= h * h;
    out.xz /= h * h;
    out.xxz /= h * h * h;
    out
}

/// Bilinear interpolation on the nearest cell, extrapolating past the edge.
pub(crate) fn local_linear(grid: &StateGrid2D, field: &[f64], x: f64, z: f64) -> f64 {
    let n = grid.n_space();
    let cell = |pos: f64| pos.floor().clamp(0.0, (n - 2) as f64) as usize;
    let (px, pz) = (grid.position(x), grid.position(z));
    let (i0, j0) = (cell(px), cell(pz));
    let (wx, wz) = (px - i0 as f64, pz - j0 as f64);
    let f = |a: usize, b: usize| field[grid.index(i0 + a, j0 + b)];
    (1.0 - wx) * ((1.0 - wz) * f(0, 0) + wz * f(0, 1)) + wx * ((1.0 - wz) * f(1, 0) + wz * f(1, 1))
}

/// Explicit jump term `sum_i nu_i [f(x + c, z + c) - f - c (f_x + f_z)]`,
/// `c = alpha z phi_i`, at every node.
fn jump_term(grid: &StateGrid2D, field: &[f64], atoms: &[(f64, f64)], alpha: f64, quadratic: bool) -> Vec<f64> {
    let n = grid.n_space();
    if atoms.is_empty() || alpha == 0.0 {
        return vec![0.0; grid.len()];
    }
    (0..grid.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let (x, z) = (grid.node(i), grid.node(j));
            let (fx, fz) = node_gradient(grid, field, i, j);
            let mut acc = 0.0;
            for &(nu, phi) in atoms {
                let c = alpha * z * phi;
                let shifted = if quadratic {
                    local_quad(grid, field, x + c, z + c).v
                } else {
                    local_linear(grid, field, x + c, z + c)
                };
                acc += nu * (shifted - field[idx] - c * (fx + fz));
            }
            acc
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Evaluates `theta` and `g` for the feedback rule `u = alpha(s) z` by
/// backward IMEX stepping: drift and diffusion implicit, jump integral
/// explicit. Boundaries use quadratic ghost extrapolation.
pub fn policy_evaluation(params: &MarketParams, strategy: &LinearStrategy, grid: &StateGrid2D) -> Result<PideSolution> {
    let horizon = params.horizon();
    if (grid.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(Error::Precondition(format!(
            "grid horizon {} differs from market horizon {horizon}",
            grid.horizon()
        )));
    }
    let n = grid.n_space();
    let nt = grid.n_time();
    let (h, dt) = (grid.h(), grid.dt());

    let mut theta_t = vec![0.0; grid.len()];
    let mut g_t = vec![0.0; grid.len()];
    for i in 0..n {
        let x = grid.node(i);
        for j in 0..n {
            theta_t[grid.index(i, j)] = 0.5 * x * x;
            g_t[grid.index(i, j)] = x;
        }
    }
    let mut theta = vec![Vec::new(); nt + 1];
    let mut g = vec![Vec::new(); nt + 1];
    theta[nt] = theta_t;
    g[nt] = g_t;

    for k in (0..nt).rev() {
        let s = grid.time(k);
        let alpha = strategy.coefficient(s);
        let (r0, rho, sig) = (params.r0(s), params.rho(s), params.sigma(s));
        let atoms = params.jump_coefficients(s);

        let mut mb = CsrBuilder::new(grid.len(), 16 * grid.len());
        for i in 0..n {
            let x = grid.node(i);
            for j in 0..n {
                let z = grid.node(j);
                let u = alpha * z;
                let diff = 0.5 * u * u * sig * sig;
                let st = local_stencil(h, r0 * x + u * rho, r0 * z + u * rho, diff);
                mb.add(grid.index(i, j), 1.0);
                for a in 0..3 {
                    for b in 0..3 {
                        if st[a][b] != 0.0 {
                            expand(grid, i, j, a as isize - 1, b as isize - 1, -dt * st[a][b], &mut |c, w| mb.add(c, w));
                        }
                    }
                }
                if diff != 0.0 {
                    add_cross(grid, i, j, -2.0 * dt * diff, |c, w| mb.add(c, w));
                }
                mb.finish_row();
            }
        }
        let mat = mb.build();

        let step_field = |prev: &[f64], quadratic: bool| -> Result<Vec<f64>> {
            let jumps = jump_term(grid, prev, &atoms, alpha, quadratic);
            let rhs: Vec<f64> = prev.iter().zip(&jumps).map(|(p, j)| p + dt * j).collect();
            let mut next = prev.to_vec();
            bicgstab(&mat, &rhs, &mut next, SOLVE_TOL, SOLVE_MAX_ITER).map_err(|st| Error::LinearSolve {
                step: k,
                iterations: st.iterations,
                residual: st.residual,
            })?;
            let (before, after) = (max_abs(prev), max_abs(&next));
            if !after.is_finite() || (before > 0.0 && after > BLOW_UP_FACTOR * before) {
                return Err(Error::Unstable { step: k, growth: after / before });
            }
            Ok(next)
        };
        theta[k] = step_field(&theta[k + 1], true)?;
        g[k] = step_field(&g[k + 1], false)?;
    }
    Ok(PideSolution { grid: grid.clone(), strategy: strategy.clone(), theta, g })
}

impl PideSolution {
    /// Bracketing time nodes and the weight of the later one.
    fn time_bracket(&self, s: f64) -> (usize, usize, f64) {
        let nt = self.grid.n_time();
        let pos = (s / self.grid.dt()).clamp(0.0, nt as f64);
        let k = (pos.floor() as usize).min(nt);
        let w = pos - k as f64;
        if w <= 1e-9 || k == nt {
            (k, k, 0.0)
        } else if w >= 1.0 - 1e-9 {
            (k + 1, k + 1, 0.0)
        } else {
            (k, k + 1, w)
        }
    }

    fn blend<T>(&self, s: f64, f: impl Fn(usize) -> T, mix: impl Fn(T, T, f64) -> T) -> T {
        let (k0, k1, w) = self.time_bracket(s);
        if k0 == k1 {
            f(k0)
        } else {
            mix(f(k0), f(k1), w)
        }
    }

    pub(crate) fn theta_at(&self, s: f64, x: f64, z: f64) -> f64 {
        self.blend(s, |k| local_quad(&self.grid, &self.theta[k], x, z).v, |a, b, w| (1.0 - w) * a + w * b)
    }

    pub fn time_index(&self, s: f64) -> Option<usize> {
        let (k0, k1, _) = self.time_bracket(s);
        (k0 == k1).then_some(k0)
    }
}

impl ValueFields for PideSolution {
    fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    fn strategy_coefficient(&self, s: f64) -> f64 {
        self.strategy.coefficient(s)
    }

    fn contains(&self, x: f64, z: f64) -> bool {
        self.grid.contains(x, z)
    }

    fn theta(&self, s: f64, x: f64, z: f64) -> f64 {
        self.theta_at(s, x, z)
    }

    fn g(&self, s: f64, x: f64, z: f64) -> f64 {
        self.blend(s, |k| local_quad(&self.grid, &self.g[k], x, z).v, |a, b, w| (1.0 - w) * a + w * b)
    }

    /// Derivatives of the local tensor-quadratic reconstruction; at a node
    /// these are the central differences.
    fn derivatives(&self, s: f64, x: f64, z: f64) -> FieldDerivatives {
        let one = |k: usize| {
            let t = local_quad(&self.grid, &self.theta[k], x, z);
            let g = local_quad(&self.grid, &self.g[k], x, z);
            FieldDerivatives {
                theta: t.v,
                theta_x: t.x,
                theta_z: t.z,
                theta_xx: t.xx,
                theta_xz: t.xz,
                theta_xxx: 0.0,
                theta_xxz: t.xxz,
                g: g.v,
                g_x: g.x,
                g_z: g.z,
                g_xx: g.xx,
                g_xz: g.xz,
                g_xxx: 0.0,
                g_xxz: g.xxz,
            }
        };
        self.blend(s, one, |a, b, w| {
            let m = |p: f64, q: f64| (1.0 - w) * p + w * q;
            FieldDerivatives {
                theta: m(a.theta, b.theta),
                theta_x: m(a.theta_x, b.theta_x),
                theta_z: m(a.theta_z, b.theta_z),
                theta_xx: m(a.theta_xx, b.theta_xx),
                theta_xz: m(a.theta_xz, b.theta_xz),
                theta_xxx: 0.0,
                theta_xxz: m(a.theta_xxz, b.theta_xxz),
                g: m(a.g, b.g),
                g_x: m(a.g_x, b.g_x),
                g_z: m(a.g_z, b.g_z),
                g_xx: m(a.g_xx, b.g_xx),
                g_xz: m(a.g_xz, b.g_xz),
                g_xxx: 0.0,
                g_xxz: m(a.g_xxz, b.g_xxz),
            }
        })
    }
}

/// Largest sup-norm relative deviation, over time slices, between the grid
/// fields and reference fields on the interior third of the grid.
/// Returns `(theta_error, g_error)`.
pub fn relative_error(sol: &PideSolution, reference: &impl ValueFields) -> (f64, f64) {
    let grid = &sol.grid;
    let range = grid.interior_third();
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..=grid.n_time() {
        let s = grid.time(k);
        let (mut dt, mut nt, mut dg, mut ng) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in range.clone() {
            for j in range.clone() {
                let (x, z) = (grid.node(i), grid.node(j));
                let idx = grid.index(i, j);
                let (te, ge) = (reference.theta(s, x, z), reference.g(s, x, z));
                dt = dt.max((sol.theta[k][idx] - te).abs());
                nt = nt.max(te.abs());
                dg = dg.max((sol.g[k][idx] - ge).abs());
                ng = ng.max(ge.abs());
            }
        }
        if nt > 0.0 {
            worst.0 = worst.0.max(dt / nt);
        }
        if ng > 0.0 {
            worst.1 = worst.1.max(dg / ng);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::solve_closed_form;
    use crate::model::MarketSpec;

    #[test]
    fn ghost_extrapolation_is_exact_on_quadratics() {
        let grid = StateGrid2D::new(5, -1.0, 1.0, 1, 1.0).unwrap();
        let f: Vec<f64> = (0..25)
            .map(|idx| {
                let (x, z) = (grid.node(idx / 5), grid.node(idx % 5));
                1.0 + 2.0 * x - z + 0.5 * x * x + 3.0 * x * z - z * z
            })
            .collect();
        for (i, j) in [(0, 0), (0, 4), (4, 2), (2, 2)] {
            let (x, z) = (grid.node(i), grid.node(j));
            let (fx, fz) = node_gradient(&grid, &f, i, j);
            assert!((fx - (2.0 + x + 3.0 * z)).abs() < 1e-12);
            assert!((fz - (-1.0 + 3.0 * x - 2.0 * z)).abs() < 1e-12);
            let loc = local_quad(&grid, &f, x + 0.3, z - 0.7);
            let (xs, zs) = (x + 0.3, z - 0.7);
            let exact = 1.0 + 2.0 * xs - zs + 0.5 * xs * xs + 3.0 * xs * zs - zs * zs;
            assert!((loc.v - exact).abs() < 1e-12);
            assert!((loc.xz - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_state_keeps_terminal_data() {
        let p = MarketParams::new(MarketSpec::constant(0.0, 0.06, 0.2, 1.0, 1.0, 1.0)).unwrap();
        let grid = StateGrid2D::new(21, -2.0, 2.0, 20, 1.0).unwrap();
        let sol = policy_evaluation(&p, &LinearStrategy::zero(1.0), &grid).unwrap();
        for k in 0..=20 {
            for idx in 0..grid.len() {
                let x = grid.node(idx / 21);
                assert!((sol.theta[k][idx] - 0.5 * x * x).abs() <= 1e-10);
                assert!((sol.g[k][idx] - x).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn terminal_slices_are_bit_exact() {
        let p = MarketParams::new(MarketSpec::e1()).unwrap();
        let cf = solve_closed_form(&p, 200).unwrap();
        let grid = StateGrid2D::new(9, -1.0, 1.0, 4, 1.0).unwrap();
        let strat = LinearStrategy::new(cf.alpha_star.clone());
        let sol = policy_evaluation(&p, &strat, &grid).unwrap();
        for idx in 0..grid.len() {
            let x = grid.node(idx / 9);
            assert_eq!(sol.theta[4][idx], 0.5 * x * x);
            assert_eq!(sol.g[4][idx], x);
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        let grid = StateGrid2D::new(9, -1.0, 1.0, 4, 2.0).unwrap();
        assert!(matches!(
            policy_evaluation(&p, &LinearStrategy::zero(1.0), &grid),
            Err(Error::Precondition(_))
        ));
    }
}
