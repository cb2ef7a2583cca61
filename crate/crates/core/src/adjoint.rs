//! First- and second-order adjoint processes built from the value fields
//! along simulated equilibrium paths, with Monte Carlo checks of their
//! backward equations and of the minimum condition on the `H-bar` function.
//!
//! Model data entering the adjoint equations for mean-variance wealth:
//! `mu(s, x, u) = r0 x + rho u`, `sigma(s, x, u) = sigma u`,
//! `c(s, x, u, e) = phi(s, e) u`, `f = 0`, `F(x) = x^2 / 2`,
//! `G(y, xbar) = -xbar^2 / 2 - mu y xbar`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{FieldDerivatives, ValueFields};
use crate::mc::estimate::McEstimate;
use crate::mc::sim::{for_each_draw, pair_terminal, simulate_with_plan, PathBundle, SimConfig, StepPlan};
use crate::model::MarketParams;
use crate::table::{Cell, Table};

/// Residuals whose magnitude is below this are treated as roundoff.
const ROUNDOFF: f64 = 1e-12;
/// Seed offset for the independent estimate of `E_t[X(T)]`.
const EXPECTATION_STREAM: u64 = 0x5eed_0fe7;

/// Affine dependence of the adjoints on the state at one time node,
/// `value = a + b X`, taken from the fields when the adjoints are built.
#[derive(Debug, Clone)]
struct AffineStep {
    p: (f64, f64),
    q: (f64, f64),
    r: Vec<(f64, f64)>,
    big_p: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct AdjointProcesses {
    pub t: f64,
    /// Starting state `X(t)`.
    pub y: f64,
    pub times: Vec<f64>,
    /// `G_xbar = -E_t[X(T)] - mu X(t)`.
    pub g_bar: f64,
    pub n_atoms: usize,
    /// Rows match the bundle rows; columns are time nodes.
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// `r[row][k * n_atoms + i]`
    pub r: Vec<Vec<f64>>,
    pub big_p: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    /// Same layout as `r`.
    pub upsilon: Vec<Vec<f64>>,
    /// Equilibrium action `alpha(s) X(s)`.
    pub control: Vec<Vec<f64>>,
    pub replicas: usize,
    plan: StepPlan,
    reference: Vec<AffineStep>,
}

impl AdjointProcesses {
    pub fn r_at(&self, row: usize, k: usize, atom: usize) -> f64 {
        self.r[row][k * self.n_atoms + atom]
    }

    pub fn upsilon_at(&self, row: usize, k: usize, atom: usize) -> f64 {
        self.upsilon[row][k * self.n_atoms + atom]
    }
}

/// Time-node data shared by all paths.
struct NodeData {
    s: f64,
    alpha: f64,
    sigma: f64,
    phi: Vec<f64>,
}

#[derive(Default)]
struct PointAdjoint {
    p: f64,
    q: f64,
    big_p: f64,
    phi: f64,
}

/// Adjoints at one point; jump terms are written to `r` and `upsilon`.
fn point_adjoint<F: ValueFields + ?Sized>(
    fields: &F,
    node: &NodeData,
    g_bar: f64,
    x: f64,
    r: &mut [f64],
    upsilon: &mut [f64],
) -> PointAdjoint {
    let s = node.s;
    let u = node.alpha * x;
    let d = fields.derivatives(s, x, x);
    let sig = node.sigma * u;
    let first = |d: &FieldDerivatives| d.theta_x + g_bar * d.g_x;
    let second = |d: &FieldDerivatives| d.theta_xx + g_bar * d.g_xx;
    for (i, phi) in node.phi.iter().enumerate() {
        let c = u * phi;
        let dj = fields.derivatives(s, x + c, x + c);
        r[i] = first(&dj) - first(&d);
        upsilon[i] = second(&dj) - second(&d);
    }
    PointAdjoint {
        p: first(&d),
        q: sig * (second(&d) + d.theta_xz + g_bar * d.g_xz),
        big_p: second(&d),
        phi: sig * (d.theta_xxx + g_bar * d.g_xxx + d.theta_xxz + g_bar * d.g_xxz),
    }
}

struct RowAdjoint {
    p: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    big_p: Vec<f64>,
    phi: Vec<f64>,
    upsilon: Vec<f64>,
    control: Vec<f64>,
}

/// Evaluates the adjoint representation along every path of a paired
/// bundle started on the diagonal at time `t`.
pub fn build_adjoints<F: ValueFields + Sync + ?Sized>(
    params: &MarketParams,
    fields: &F,
    bundle: &PathBundle,
    t: f64,
    expected_terminal: f64,
) -> Result<AdjointProcesses> {
    let twin = bundle
        .twin_wealth
        .as_ref()
        .ok_or_else(|| Error::Precondition("adjoints need a paired bundle with the equilibrium twin".into()))?;
    if (bundle.times[0] - t).abs() > 1e-12 {
        return Err(Error::Precondition(format!("bundle starts at {} but adjoints were requested at {t}", bundle.times[0])));
    }
    let n = bundle.times.len() - 1;
    let y = twin.first().map_or(0.0, |row| row[0]);
    let g_bar = -expected_terminal - params.mu() * y;
    let plan = StepPlan::with_alpha(params, |s| fields.strategy_coefficient(s), t, n)?;
    let na = plan.n_atoms();
    let nodes: Vec<NodeData> = bundle
        .times
        .iter()
        .map(|&s| NodeData {
            s,
            alpha: fields.strategy_coefficient(s),
            sigma: params.sigma(s),
            phi: params.jump_coefficients(s).into_iter().map(|(_, phi)| phi).collect(),
        })
        .collect();

    let rows: Vec<RowAdjoint> = twin
        .par_iter()
        .map(|path| {
            let mut row = RowAdjoint {
                p: Vec::with_capacity(n + 1),
                q: Vec::with_capacity(n + 1),
                r: vec![0.0; (n + 1) * na],
                big_p: Vec::with_capacity(n + 1),
                phi: Vec::with_capacity(n + 1),
                upsilon: vec![0.0; (n + 1) * na],
                control: Vec::with_capacity(n + 1),
            };
            for (k, (node, &x)) in nodes.iter().zip(path).enumerate() {
                let span = k * na..(k + 1) * na;
                let a = point_adjoint(fields, node, g_bar, x, &mut row.r[span.clone()], &mut row.upsilon[span]);
                row.p.push(a.p);
                row.q.push(a.q);
                row.big_p.push(a.big_p);
                row.phi.push(a.phi);
                row.control.push(node.alpha * x);
            }
            row
        })
        .collect();
    let reference = nodes
        .iter()
        .map(|node| {
            let (mut r0, mut r1, mut scratch) = (vec![0.0; na], vec![0.0; na], vec![0.0; na]);
            let a = point_adjoint(fields, node, g_bar, 0.0, &mut r0, &mut scratch);
            let b = point_adjoint(fields, node, g_bar, 1.0, &mut r1, &mut scratch);
            AffineStep {
                p: (a.p, b.p - a.p),
                q: (a.q, b.q - a.q),
                r: r0.iter().zip(&r1).map(|(ra, rb)| (*ra, rb - ra)).collect(),
                big_p: (a.big_p, b.big_p - a.big_p),
            }
        })
        .collect();

    let mut adj = AdjointProcesses {
        t,
        y,
        times: bundle.times.clone(),
        g_bar,
        n_atoms: na,
        p: Vec::with_capacity(rows.len()),
        q: Vec::with_capacity(rows.len()),
        r: Vec::with_capacity(rows.len()),
        big_p: Vec::with_capacity(rows.len()),
        phi: Vec::with_capacity(rows.len()),
        upsilon: Vec::with_capacity(rows.len()),
        control: Vec::with_capacity(rows.len()),
        replicas: bundle.replicas,
        plan,
        reference,
    };
    for row in rows {
        adj.p.push(row.p);
        adj.q.push(row.q);
        adj.r.push(row.r);
        adj.big_p.push(row.big_p);
        adj.phi.push(row.phi);
        adj.upsilon.push(row.upsilon);
        adj.control.push(row.control);
    }
    Ok(adj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    /// `p(s') - p(s) + int (mu_x p + sigma_x q + sum c_x r nu + f_x)`.
    PDrift,
    /// Drift residual of `p` times `W(s') - W(s)`, minus `int q`.
    PBrownian,
    /// Drift residual of `p` times the compensated count of an atom, minus
    /// `int r nu`.
    PJump(usize),
    /// `P(s') - P(s) + int` of the second-order driver.
    BigPDrift,
}

impl ResidualKind {
    pub fn label(&self) -> String {
        match self {
            ResidualKind::PDrift => "p_drift".into(),
            ResidualKind::PBrownian => "p_brownian".into(),
            ResidualKind::PJump(i) => format!("p_jump_{i}"),
            ResidualKind::BigPDrift => "P_drift".into(),
        }
    }
}

/// Per-draw samples of one residual over one checkpoint interval.
#[derive(Debug, Clone)]
pub struct ResidualSamples {
    pub kind: ResidualKind,
    pub start: f64,
    pub end: f64,
    pub samples: Vec<f64>,
}

/// Node indices of `intervals` equal pieces of `0..=n`.
fn checkpoints(n: usize, intervals: usize) -> Vec<usize> {
    (0..=intervals).map(|j| (j * n + intervals / 2) / intervals).collect()
}

fn trapezoid(times: &[f64], a: usize, b: usize, f: impl Fn(usize) -> f64) -> f64 {
    (a..b).map(|k| 0.5 * (f(k) + f(k + 1)) * (times[k + 1] - times[k])).sum()
}

/// Samples of the martingale residuals of the first- and second-order
/// adjoint equations on `intervals` consecutive checkpoint intervals.
pub fn bsde_residual(params: &MarketParams, adj: &AdjointProcesses, bundle: &PathBundle, intervals: usize) -> Result<Vec<ResidualSamples>> {
    if bundle.n_rows() != adj.p.len() {
        return Err(Error::Precondition("adjoints were built on a different bundle".into()));
    }
    let times = &adj.times;
    let n = times.len() - 1;
    if intervals == 0 || intervals > n {
        return Err(Error::Precondition(format!("need 1..={n} checkpoint intervals, got {intervals}")));
    }
    let cps = checkpoints(n, intervals);
    let atoms = params.jump_coefficients(adj.t);
    let nu: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let na = nu.len();
    let r0: Vec<f64> = times.iter().map(|&s| params.r0(s)).collect();
    // mean-variance model: mu_x = r0, sigma_x = c_x = f_x = 0, H_xx = 0
    let (sigma_x, c_x, f_x, h_xx) = (0.0, 0.0, 0.0, 0.0);

    let mut kinds = vec![ResidualKind::PDrift, ResidualKind::PBrownian];
    kinds.extend((0..nu.len()).map(ResidualKind::PJump));
    kinds.push(ResidualKind::BigPDrift);

    let per_row: Vec<Vec<f64>> = (0..bundle.n_rows())
        .into_par_iter()
        .map(|row| {
            let (p, q, r, bp) = (&adj.p[row], &adj.q[row], &adj.r[row], &adj.big_p[row]);
            let (phi, ups) = (&adj.phi[row], &adj.upsilon[row]);
            let mut cum_w = vec![0.0; n + 1];
            for k in 0..n {
                cum_w[k + 1] = cum_w[k] + bundle.brownian[row][k];
            }
            let mut counts = vec![vec![0.0; n + 1]; nu.len()];
            for &(k, i) in &bundle.jump_log[row] {
                counts[i][k + 1] += 1.0;
            }
            for c in counts.iter_mut() {
                for k in 0..n {
                    c[k + 1] += c[k];
                }
            }
            let mut out = Vec::with_capacity(intervals * kinds.len());
            for w in cps.windows(2) {
                let (a, b) = (w[0], w[1]);
                let drift = trapezoid(times, a, b, |k| {
                    r0[k] * p[k] + sigma_x * q[k] + r[k * na..(k + 1) * na].iter().zip(&nu).map(|(rk, v)| c_x * rk * v).sum::<f64>() + f_x
                });
                let dp = p[b] - p[a] + drift;
                out.push(dp);
                out.push(dp * (cum_w[b] - cum_w[a]) - trapezoid(times, a, b, |k| q[k]));
                for (i, &v) in nu.iter().enumerate() {
                    let comp = counts[i][b] - counts[i][a] - v * (times[b] - times[a]);
                    out.push(dp * comp - trapezoid(times, a, b, |k| r[k * na + i] * v));
                }
                let big_drift = trapezoid(times, a, b, |k| {
                    (2.0 * r0[k] + sigma_x * sigma_x) * bp[k]
                        + 2.0 * sigma_x * phi[k]
                        + ups[k * na..(k + 1) * na]
                            .iter()
                            .zip(&nu)
                            .map(|(u, v)| ((u + bp[k]) * c_x * c_x + 2.0 * c_x * u) * v)
                            .sum::<f64>()
                        + h_xx
                });
                out.push(bp[b] - bp[a] + big_drift);
            }
            out
        })
        .collect();

    let per_draw = per_row.len() / adj.replicas;
    let mut result = Vec::with_capacity(intervals * kinds.len());
    for (j, w) in cps.windows(2).enumerate() {
        for (c, &kind) in kinds.iter().enumerate() {
            let col = j * kinds.len() + c;
            let samples = (0..per_draw)
                .map(|d| (0..adj.replicas).map(|rep| per_row[d * adj.replicas + rep][col]).sum::<f64>() / adj.replicas as f64)
                .collect();
            result.push(ResidualSamples { kind, start: times[w[0]], end: times[w[1]], samples });
        }
    }
    Ok(result)
}

/// Exact mean of the Euler scheme's terminal wealth from `y`.
pub fn discrete_mean(plan: &StepPlan, y: f64) -> f64 {
    (0..plan.n_steps()).fold(y, |m, k| m * (plan.growth[k] + plan.alpha[k] * plan.rho_dt[k]))
}

/// Exact expectation of each residual under the Euler scheme, from moment
/// recursions of the affine reference coefficients. This is the
/// discretisation bias of the checks.
fn euler_bias(params: &MarketParams, adj: &AdjointProcesses, intervals: usize) -> Vec<f64> {
    let plan = &adj.plan;
    let times = &adj.times;
    let n = times.len() - 1;
    let cps = checkpoints(n, intervals);
    let reference = &adj.reference;
    let mean_growth: Vec<f64> = (0..n).map(|k| plan.growth[k] + plan.alpha[k] * plan.rho_dt[k]).collect();
    let mut m = vec![adj.y; n + 1];
    for k in 0..n {
        m[k + 1] = m[k] * mean_growth[k];
    }
    let r0: Vec<f64> = times.iter().map(|&s| params.r0(s)).collect();
    let mean_p = |k: usize| reference[k].p.0 + reference[k].p.1 * m[k];
    let n_atoms = plan.n_atoms();
    let mut out = Vec::new();
    for w in cps.windows(2) {
        let (a, b) = (w[0], w[1]);
        out.push(mean_p(b) - mean_p(a) + trapezoid(times, a, b, |k| r0[k] * mean_p(k)));
        // covariance of X_k with the noise increment accumulated since a
        let cov = |shock: &dyn Fn(usize) -> f64| {
            let mut c = vec![0.0; n + 1];
            for k in a..b {
                c[k + 1] = mean_growth[k] * c[k] + plan.alpha[k] * shock(k) * m[k];
            }
            c
        };
        let cw = cov(&|k| plan.sigma[k] * plan.dt);
        let mean_q = |k: usize| reference[k].q.0 + reference[k].q.1 * m[k];
        out.push(
            reference[b].p.1 * cw[b] + trapezoid(times, a, b, |k| r0[k] * reference[k].p.1 * cw[k])
                - trapezoid(times, a, b, mean_q),
        );
        for i in 0..n_atoms {
            let nu = plan.nu_dt[i] / plan.dt;
            let cn = cov(&|k| plan.phi[k][i] * plan.nu_dt[i]);
            let mean_r = |k: usize| reference[k].r[i].0 + reference[k].r[i].1 * m[k];
            out.push(
                reference[b].p.1 * cn[b] + trapezoid(times, a, b, |k| r0[k] * reference[k].p.1 * cn[k])
                    - trapezoid(times, a, b, |k| mean_r(k) * nu),
            );
        }
        let mean_big = |k: usize| reference[k].big_p.0 + reference[k].big_p.1 * m[k];
        out.push(mean_big(b) - mean_big(a) + trapezoid(times, a, b, |k| 2.0 * r0[k] * mean_big(k)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbarReport {
    pub argmin: f64,
    pub target: f64,
    pub cell: f64,
    pub pass: bool,
}

/// `H-bar(t, t, X(t), u)` from the adjoints at the start node.
pub fn hbar_value(params: &MarketParams, adj: &AdjointProcesses, u: f64) -> f64 {
    let s = adj.t;
    let (p, q, big_p) = (adj.p[0][0], adj.q[0][0], adj.big_p[0][0]);
    let u_hat = adj.control[0][0];
    let state = adj.y;
    let sig = params.sigma(s);
    let mut h = (params.r0(s) * state + params.rho(s) * u) * p + sig * u * q + 0.5 * big_p * (sig * u - sig * u_hat).powi(2);
    for (i, (nu, phi)) in params.jump_coefficients(s).into_iter().enumerate() {
        h += phi * u * adj.r_at(0, 0, i) * nu;
        h += 0.5 * (adj.upsilon_at(0, 0, i) + big_p) * (phi * u - phi * u_hat).powi(2) * nu;
    }
    h
}

/// Scans `u_grid` for the minimiser of `H-bar(t, t, X(t), .)` and compares
/// it with the equilibrium action `alpha(t) X(t)`, allowing one grid cell.
pub fn hbar_min_check(params: &MarketParams, adj: &AdjointProcesses, u_grid: &[f64]) -> Result<HbarReport> {
    if u_grid.len() < 2 {
        return Err(Error::Precondition("u grid needs at least two points".into()));
    }
    let mut best = (u_grid[0], f64::INFINITY);
    for &u in u_grid {
        let h = hbar_value(params, adj, u);
        if h < best.1 {
            best = (u, h);
        }
    }
    let cell = u_grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let target = adj.control[0][0];
    Ok(HbarReport { argmin: best.0, target, cell, pass: (best.0 - target).abs() <= cell * (1.0 + 1e-9) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    pub intervals: usize,
    /// Paths for a Monte Carlo estimate of `E_t[X(T)]`; 0 uses the exact
    /// mean of the Euler scheme.
    pub expectation_paths: usize,
    /// Draws per chunk; bounds memory for the per-path adjoint matrices.
    pub chunk: usize,
    /// Multiplies `q` after construction (1 leaves it untouched).
    pub q_scale: f64,
    pub k_se: f64,
    /// Extra absolute tolerance added to every residual budget.
    pub abs_tol: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self { intervals: 4, expectation_paths: 0, chunk: 1000, q_scale: 1.0, k_se: 3.0, abs_tol: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub kind: ResidualKind,
    pub start: f64,
    pub end: f64,
    pub residual: McEstimate,
    pub bias: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    pub expected_terminal: McEstimate,
    pub rows: Vec<ResidualRow>,
    /// `max |p(T) - X(T) - G_xbar|` over paths.
    pub terminal_error: f64,
    pub hbar: HbarReport,
}

impl AdjointReport {
    pub fn residuals_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// `kind,start,end,residual,std_error,bias,pass`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["kind", "start", "end", "residual", "std_error", "bias", "pass"]);
        for r in &self.rows {
            t.push_row(vec![
                Cell::from(r.kind.label()),
                Cell::from(r.start),
                Cell::from(r.end),
                Cell::from(r.residual.mean),
                Cell::from(r.residual.std_error),
                Cell::from(r.bias),
                Cell::from(r.pass),
            ]);
        }
        t
    }
}

/// Full bridge check from the diagonal start `(t, y, y)`: computes
/// `E_t[X(T)]`, builds the adjoints chunk by chunk along `cfg.n_paths`
/// equilibrium paths, and evaluates the residuals and the `H-bar` minimum.
pub fn adjoint_check<F: ValueFields + Sync + ?Sized>(
    params: &MarketParams,
    fields: &F,
    t: f64,
    y: f64,
    cfg: &SimConfig,
    opts: &AdjointOptions,
    u_grid: &[f64],
) -> Result<AdjointReport> {
    let plan = StepPlan::with_alpha(params, |s| fields.strategy_coefficient(s), t, cfg.n_steps)?;
    let expected_terminal = if opts.expectation_paths == 0 {
        McEstimate::exact(discrete_mean(&plan, y), 0)
    } else {
        let ecfg = SimConfig { n_paths: opts.expectation_paths, seed: cfg.seed ^ EXPECTATION_STREAM, ..*cfg };
        let terminal: Vec<f64> = for_each_draw(&plan, &ecfg, 0..ecfg.n_paths, |_, noise| {
            Ok(noise.units.iter().map(|u| pair_terminal(&plan, u, y, y, None).1).sum::<f64>() / noise.units.len() as f64)
        })?;
        McEstimate::from_samples(&terminal)
    };

    let chunk = opts.chunk.max(1);
    let mut samples: Vec<ResidualSamples> = Vec::new();
    let mut terminal_error = 0.0f64;
    let mut first: Option<AdjointProcesses> = None;
    let mut start = 0;
    while start < cfg.n_paths {
        let end = (start + chunk).min(cfg.n_paths);
        let bundle = simulate_with_plan(&plan, y, y, cfg, true, start..end)?;
        let mut adj = build_adjoints(params, fields, &bundle, t, expected_terminal.mean)?;
        if opts.q_scale != 1.0 {
            adj.q.iter_mut().flatten().for_each(|v| *v *= opts.q_scale);
        }
        let twin = bundle.twin_wealth.as_ref().unwrap();
        let last = adj.times.len() - 1;
        for (row, path) in twin.iter().enumerate() {
            terminal_error = terminal_error.max((adj.p[row][last] - path[last] - adj.g_bar).abs());
        }
        let part = bsde_residual(params, &adj, &bundle, opts.intervals)?;
        if samples.is_empty() {
            samples = part;
        } else {
            for (acc, new) in samples.iter_mut().zip(part) {
                acc.samples.extend(new.samples);
            }
        }
        if first.is_none() {
            first = Some(adj);
        }
        start = end;
    }
    let first = first.ok_or_else(|| Error::Precondition("need at least one path".into()))?;
    let bias = euler_bias(params, &first, opts.intervals);
    let rows = samples
        .iter()
        .zip(bias)
        .map(|(s, b)| {
            let residual = McEstimate::from_samples(&s.samples);
            let budget = opts.k_se * residual.std_error + b.abs() + opts.abs_tol + ROUNDOFF;
            ResidualRow { kind: s.kind, start: s.start, end: s.end, residual, bias: b, pass: residual.mean.abs() <= budget }
        })
        .collect();
    let hbar = hbar_min_check(params, &first, u_grid)?;
    Ok(AdjointReport { expected_terminal, rows, terminal_error, hbar })
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}
