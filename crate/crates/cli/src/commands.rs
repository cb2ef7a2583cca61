//! The `solve`, `verify` and `compare` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use eqpide_core::adjoint::{adjoint_check, uniform_grid, AdjointOptions};
use eqpide_core::mc::{estimate_g, estimate_theta, evaluate_cost, spike_variation_batch, Control, McEstimate, SimConfig};
use eqpide_core::pide::io::{write_binary, write_csv, Field};
use eqpide_core::pide::{policy_evaluation, policy_iteration, relative_error, StateGrid2D};
use eqpide_core::{
    check_identities, evaluate_strategy, integrate_backward, solve_closed_form, AnsatzFields, Cell, ClosedFormSolution, CoefficientFn,
    Error, LinearStrategy, MarketParams, Table, ValueFields,
};

use crate::config::{LoadedConfig, RunConfig};
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const COMPARE_CAVEAT: &str = "equilibrium does NOT dominate all rows (it is an equilibrium, not a pre-commitment optimum)";

/// Number of sample times for the no-jump reduction check.
const REDUCTION_SAMPLES: usize = 20;

pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub params: MarketParams,
}

impl Context {
    pub fn new(loaded: LoadedConfig, out: Option<PathBuf>) -> Result<Self, CliError> {
        let spec = loaded.config.market_spec()?;
        let params = MarketParams::new(spec)?;
        let out = out.unwrap_or_else(|| loaded.config.output.dir.clone());
        std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self { config: loaded.config, hash: loaded.hash, out, params })
    }

    fn preamble(&self, table: &str) -> Vec<String> {
        vec![format!("schema_version={SCHEMA_VERSION}"), format!("config_sha256={}", self.hash), format!("table={table}")]
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    fn write_table(&self, name: &str, table: &Table, extra: &[String]) -> Result<PathBuf, CliError> {
        let mut preamble = self.preamble(name.trim_end_matches(".csv"));
        preamble.extend_from_slice(extra);
        let mut w = self.create(name)?;
        table.write_csv(&mut w, &preamble)?;
        w.flush()?;
        Ok(self.out.join(name))
    }

    fn sim_config(&self) -> SimConfig {
        let mc = &self.config.mc;
        SimConfig::new(mc.n_paths, mc.n_steps, mc.seed).with_antithetic(mc.antithetic)
    }

    fn closed_form(&self) -> Result<ClosedFormSolution, CliError> {
        Ok(solve_closed_form(&self.params, self.config.ode.quad_steps)?)
    }

    fn grid(&self) -> Result<StateGrid2D, CliError> {
        let g = &self.config.grid;
        Ok(StateGrid2D::new(g.nx, g.lo, g.hi, g.nt, self.params.horizon())?)
    }

    /// The configured strategy, its ansatz fields, and whether it is the
    /// equilibrium itself.
    fn strategy(&self, cf: &ClosedFormSolution) -> Result<(LinearStrategy, AnsatzFields, bool), CliError> {
        let equilibrium = LinearStrategy::new(cf.alpha_star.clone());
        let s = &self.config.strategy;
        let strategy = match (&s.scale, &s.file) {
            (None, None) => return Ok((equilibrium, cf.fields(), true)),
            (Some(k), _) => equilibrium.scaled(*k),
            (_, Some(path)) => read_strategy(path, self.params.horizon())?,
        };
        let fields = evaluate_strategy(&self.params, &strategy, self.config.ode.n_steps)?.fields();
        Ok((strategy, fields, false))
    }
}

/// Reads `s,alpha` rows on a uniform grid of `[0, T]`; `#` lines and a
/// header line are skipped.
pub fn read_strategy(path: &Path, horizon: f64) -> Result<LinearStrategy, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("strategy.file {}: {e}", path.display())))?;
    let bad = |line: usize, msg: &str| CliError::Config(format!("strategy.file {} line {line}: {msg}", path.display()));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(s), Some(a), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(i + 1, "expected two columns `s,alpha`"));
        };
        let s: f64 = s.parse().map_err(|_| bad(i + 1, "time is not a number"))?;
        let a: f64 = a.parse().map_err(|_| bad(i + 1, "alpha is not a number"))?;
        rows.push((i + 1, s, a));
    }
    if rows.len() < 2 {
        return Err(CliError::Config(format!("strategy.file {}: need at least two rows", path.display())));
    }
    let n = rows.len() - 1;
    for (k, &(line, s, _)) in rows.iter().enumerate() {
        let expected = horizon * k as f64 / n as f64;
        if (s - expected).abs() > 1e-9 * horizon.max(1.0) {
            return Err(bad(line, &format!("times must be uniform on [0, {horizon}], expected {expected}")));
        }
    }
    let alpha = CoefficientFn::from_samples(horizon, rows.into_iter().map(|r| r.2).collect())
        .map_err(|e| CliError::Config(format!("strategy.file {}: {e}", path.display())))?;
    Ok(LinearStrategy::new(alpha))
}

/// Writes the closed forms, the ODE solution, and the policy-iteration
/// fields. Returns the files written.
pub fn cmd_solve(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let cf = ctx.closed_form()?;
    written.push(ctx.write_table("closed_form.csv", &cf.to_table(), &[])?);
    let ode = integrate_backward(&ctx.params, ctx.config.ode.n_steps)?;
    written.push(ctx.write_table("ode.csv", &ode.to_table(), &[])?);

    let grid = ctx.grid()?;
    let g = &ctx.config.grid;
    let result = policy_iteration(&ctx.params, &grid, g.max_policy_iters, g.policy_tol)?;
    for field in [Field::Theta, Field::G] {
        let name = format!("pide_{}", field.name());
        let mut w = ctx.create(&format!("{name}.csv"))?;
        write_csv(&result.solution, &[field], &mut w, &ctx.preamble(&name), g.csv_stride)?;
        w.flush()?;
        written.push(ctx.out.join(format!("{name}.csv")));
        let mut w = ctx.create(&format!("{name}.bin"))?;
        write_binary(&result.solution, field, &mut w)?;
        w.flush()?;
        written.push(ctx.out.join(format!("{name}.bin")));
    }

    let mut trace = Table::new(["iteration", "sup_change", "sup_error_vs_closed_form"]);
    let final_error = grid.t_nodes().iter().map(|&s| (result.strategy.coefficient(s) - cf.alpha_star.eval(s)).abs()).fold(0.0, f64::max);
    for (i, d) in result.trace.iter().enumerate() {
        let err = if i + 1 == result.trace.len() { Cell::from(final_error) } else { Cell::from("") };
        trace.push_row(vec![Cell::from(i + 1), Cell::from(*d), err]);
    }
    written.push(ctx.write_table("policy_trace.csv", &trace, &[])?);

    let mut strategy = Table::new(["s", "alpha_policy_iteration", "alpha_star"]);
    for &s in &grid.t_nodes() {
        strategy.push_numbers([s, result.strategy.coefficient(s), cf.alpha_star.eval(s)]);
    }
    written.push(ctx.write_table("policy_strategy.csv", &strategy, &[])?);
    Ok(written)
}

/// One row of the verification report; `pass` is `measured <= tolerance`
/// unless stated otherwise.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub measured: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), tolerance, measured, pass: measured <= tolerance }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["check", "tolerance", "measured", "pass"]);
        for c in &self.checks {
            t.push_row(vec![Cell::from(c.name.as_str()), Cell::from(c.tolerance), Cell::from(c.measured), Cell::from(c.pass)]);
        }
        t
    }
}

/// `|estimate - exact| / SE`, with an exact estimate counting as 0 or
/// infinity.
fn z_score(est: &McEstimate, exact: f64) -> f64 {
    let diff = (est.mean - exact).abs();
    if est.std_error > 0.0 {
        diff / est.std_error
    } else if diff <= 1e-12 * exact.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

fn sup_scaled(times: &[f64], values: &[f64], exact: &CoefficientFn) -> f64 {
    let scale = exact.max_abs().max(f64::MIN_POSITIVE);
    times.iter().zip(values).map(|(&s, v)| (v - exact.eval(s)).abs() / scale).fold(0.0, f64::max)
}

fn ode_checks(ctx: &Context, cf: &ClosedFormSolution, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let v = &ctx.config.verify;
    let ode = integrate_backward(&ctx.params, ctx.config.ode.n_steps)?;
    let ids = check_identities(&ode);
    checks.push(Check::at_most("identity M1=N1^2", ids.m1_dev, v.identity_tol));
    checks.push(Check::at_most("identity M3=N1*N2", ids.m3_dev, v.identity_tol));
    for (name, num, exact) in [
        ("N1", &ode.n1, &cf.n1),
        ("N2", &ode.n2, &cf.n2),
        ("M1", &ode.m1, &cf.m1),
        ("M2", &ode.m2, &cf.m2),
        ("M3", &ode.m3, &cf.m3),
    ] {
        checks.push(Check::at_most(format!("ode vs closed form {name}"), sup_scaled(&ode.times, num, exact), v.ode_tol));
    }
    if ctx.params.jumps().is_empty() {
        let n = ode.times.len() - 1;
        let mut worst = 0.0f64;
        for j in 0..REDUCTION_SAMPLES {
            let k = j * n / REDUCTION_SAMPLES;
            let hu = cf.equilibrium_coefficient(&ctx.params, ode.times[k])?;
            worst = worst.max(((ode.alpha[k] - hu) / hu).abs());
        }
        checks.push(Check::at_most("no-jump reduction", worst, v.reduction_tol));
    }
    Ok(())
}

fn pide_checks(ctx: &Context, cf: &ClosedFormSolution, strategy: &LinearStrategy, fields: &AnsatzFields, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let v = &ctx.config.verify;
    let grid = ctx.grid()?;
    let sol = policy_evaluation(&ctx.params, strategy, &grid)?;
    let (et, eg) = relative_error(&sol, fields);
    checks.push(Check::at_most("pide ansatz theta", et, v.pide_tol));
    checks.push(Check::at_most("pide ansatz g", eg, v.pide_tol));
    let g = &ctx.config.grid;
    match policy_iteration(&ctx.params, &grid, g.max_policy_iters, g.policy_tol) {
        Ok(result) => {
            let err = grid.t_nodes().iter().map(|&s| (result.strategy.coefficient(s) - cf.alpha_star.eval(s)).abs()).fold(0.0, f64::max);
            checks.push(Check::at_most("policy iteration sup|alpha - alpha*|", err, v.policy_tol));
            checks.push(Check::at_most("policy iteration iterations", result.iterations() as f64, g.max_policy_iters as f64));
        }
        Err(Error::NotConverged { iterations, .. }) => {
            checks.push(Check { name: "policy iteration iterations".into(), tolerance: g.max_policy_iters as f64, measured: iterations as f64, pass: false });
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn mc_checks(ctx: &Context, strategy: &LinearStrategy, fields: &AnsatzFields, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let v = &ctx.config.verify;
    let cfg = ctx.sim_config();
    let x0 = ctx.params.x0();
    let theta = estimate_theta(&ctx.params, strategy, 0.0, x0, x0, &cfg)?;
    checks.push(Check::at_most("feynman-kac theta z-score", z_score(&theta, fields.theta(0.0, x0, x0)), v.k_se));
    let g = estimate_g(&ctx.params, strategy, 0.0, x0, x0, &cfg)?;
    checks.push(Check::at_most("feynman-kac g z-score", z_score(&g, fields.g(0.0, x0, x0)), v.k_se));

    for &t in &v.times {
        let alpha = strategy.coefficient(t);
        let values: Vec<f64> = v.offsets.iter().map(|d| alpha + d).collect();
        let reports = spike_variation_batch(&ctx.params, strategy, fields, t, x0, &values, &v.epsilons, &cfg)?;
        let s2 = ctx.params.total_variance_rate(t);
        let quad = 0.5 * (fields.m1.eval(t) + fields.m3.eval(t)) * s2;
        for r in reports {
            let label = format!("t={t} v={:.6}", r.v);
            let excursion = r
                .quotients
                .iter()
                .map(|q| -(q.quotient + r.slope.abs() * q.eps_effective) / q.std_error.max(f64::MIN_POSITIVE))
                .fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::at_most(format!("spike one-sided {label}"), excursion, v.k_se));
            let predicted = quad * (r.v - alpha).powi(2) * x0 * x0;
            let se = r.limit_se.max(f64::MIN_POSITIVE);
            checks.push(Check::at_most(format!("spike limit vs (M1+M3)/2 gap {label}"), (r.limit - predicted).abs() / se, v.k_se));
            checks.push(Check::at_most(format!("spike limit vs H gap {label}"), (r.limit - r.h_gap).abs() / se, v.k_se));
        }
    }

    let opts = AdjointOptions { intervals: v.adjoint_intervals, k_se: v.k_se, ..AdjointOptions::default() };
    let grid = uniform_grid(v.hbar_lo, v.hbar_hi, v.hbar_points);
    let rep = adjoint_check(&ctx.params, fields, 0.0, x0, &cfg, &opts, &grid)?;
    for row in &rep.rows {
        let budget = v.k_se * row.residual.std_error + row.bias.abs();
        checks.push(Check {
            name: format!("adjoint {} [{}, {}]", row.kind.label(), row.start, row.end),
            tolerance: budget,
            measured: row.residual.mean.abs(),
            pass: row.pass,
        });
    }
    checks.push(Check::at_most("adjoint terminal p(T) = X(T) + G_xbar", rep.terminal_error, 1e-10));
    checks.push(Check {
        name: "H-bar argmin distance".into(),
        tolerance: rep.hbar.cell,
        measured: (rep.hbar.argmin - rep.hbar.target).abs(),
        pass: rep.hbar.pass,
    });
    Ok(())
}

/// Runs every check and writes `verify_report.csv`.
pub fn cmd_verify(ctx: &Context) -> Result<VerifyReport, CliError> {
    let cf = ctx.closed_form()?;
    let (strategy, fields, _) = ctx.strategy(&cf)?;
    let mut checks = Vec::new();
    ode_checks(ctx, &cf, &mut checks)?;
    pide_checks(ctx, &cf, &strategy, &fields, &mut checks)?;
    mc_checks(ctx, &strategy, &fields, &mut checks)?;
    let report = VerifyReport { checks };
    ctx.write_table("verify_report.csv", &report.to_table(), &[])?;
    Ok(report)
}

/// Tabulates `J(0, x0)` for the equilibrium and alternative strategies in
/// `compare.csv`.
pub fn cmd_compare(ctx: &Context) -> Result<Table, CliError> {
    let cf = ctx.closed_form()?;
    let horizon = ctx.params.horizon();
    let equilibrium = LinearStrategy::new(cf.alpha_star.clone());
    let mut rows: Vec<(String, LinearStrategy)> = vec![("equilibrium".into(), equilibrium.clone())];
    let (configured, _, is_equilibrium) = ctx.strategy(&cf)?;
    if !is_equilibrium {
        rows.push(("configured".into(), configured));
    }
    for &c in &ctx.config.compare.constants {
        rows.push((format!("constant alpha={c}"), LinearStrategy::constant(horizon, c)));
    }
    for &k in &ctx.config.compare.scales {
        rows.push((format!("equilibrium x{k}"), equilibrium.scaled(k)));
    }
    let cfg = ctx.sim_config();
    let x0 = ctx.params.x0();
    let mut table = Table::new(["strategy", "J_0_x0", "std_error"]);
    for (label, strategy) in rows {
        let j = evaluate_cost(&ctx.params, &strategy, Control::Strategy, 0.0, x0, &cfg)?;
        table.push_row(vec![Cell::from(label), Cell::from(j.mean), Cell::from(j.std_error)]);
    }
    ctx.write_table("compare.csv", &table, &[COMPARE_CAVEAT.to_string()])?;
    Ok(table)
}
