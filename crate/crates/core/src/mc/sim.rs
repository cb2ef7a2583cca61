//! Euler simulation of the wealth equation with finite-activity jumps.
//!
//! The discount factor is applied exactly over each step,
//! `X_{k+1} = X_k exp(int r0) + u_k (rho dt + sigma dW + sum_i phi_i (dN_i - nu_i dt))`,
//! so paths with `u = 0` reproduce the deterministic growth to roundoff.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::rng::path_rng;
use crate::error::{Error, Result};
use crate::model::{LinearStrategy, MarketParams};
use crate::quadrature::simpson;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Independent noise draws. With `antithetic` each draw drives two paths.
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self { n_paths, n_steps, seed, antithetic: false }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn replicas(&self) -> usize {
        if self.antithetic {
            2
        } else {
            1
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::Precondition(format!(
                "n_paths and n_steps must be positive, got {} and {}",
                self.n_paths, self.n_steps
            )));
        }
        Ok(())
    }
}

/// Per-step coefficients on the Euler grid of `[t0, T]`.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub times: Vec<f64>,
    pub dt: f64,
    pub growth: Vec<f64>,
    pub rho_dt: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sqrt_dt: f64,
    pub alpha: Vec<f64>,
    /// `phi_i(s_k)` for every step and atom.
    pub phi: Vec<Vec<f64>>,
    /// `nu_i dt` for every atom.
    pub nu_dt: Vec<f64>,
    poisson: Vec<Option<Poisson<f64>>>,
}

impl StepPlan {
    pub fn new(params: &MarketParams, strategy: &LinearStrategy, t0: f64, n_steps: usize) -> Result<Self> {
        Self::with_alpha(params, |s| strategy.coefficient(s), t0, n_steps)
    }

    /// Plan for the feedback coefficient `alpha`.
    pub fn with_alpha(params: &MarketParams, alpha: impl Fn(f64) -> f64, t0: f64, n_steps: usize) -> Result<Self> {
        params.check_time(t0)?;
        if n_steps == 0 {
            return Err(Error::Precondition("need at least one Euler step".into()));
        }
        let horizon = params.horizon();
        if !(t0 < horizon) {
            return Err(Error::Precondition(format!("start time {t0} must be before the horizon {horizon}")));
        }
        let dt = (horizon - t0) / n_steps as f64;
        let times: Vec<f64> = (0..=n_steps).map(|k| if k == n_steps { horizon } else { t0 + k as f64 * dt }).collect();
        let steps = 0..n_steps;
        let growth = steps
            .clone()
            .map(|k| simpson(|s| params.r0(s), times[k], times[k + 1], 2).exp())
            .collect();
        let nu_dt: Vec<f64> = params.jumps().atoms.iter().map(|a| a.intensity * dt).collect();
        let poisson = nu_dt.iter().map(|&l| if l > 0.0 { Poisson::new(l).ok() } else { None }).collect();
        Ok(Self {
            dt,
            growth,
            rho_dt: steps.clone().map(|k| params.rho(times[k]) * dt).collect(),
            sigma: steps.clone().map(|k| params.sigma(times[k])).collect(),
            sqrt_dt: dt.sqrt(),
            alpha: steps.clone().map(|k| alpha(times[k])).collect(),
            phi: steps.map(|k| params.jump_coefficients(times[k]).into_iter().map(|(_, p)| p).collect()).collect(),
            nu_dt,
            poisson,
            times,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.growth.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.nu_dt.len()
    }

    /// Number of whole steps closest to a duration `eps`.
    pub fn steps_for(&self, eps: f64) -> usize {
        (eps / self.dt).round() as usize
    }
}

/// Noise of one draw: standard normals and Poisson counts, plus the unit
/// control increments `rho dt + sigma dW + sum phi (dN - nu dt)` for each
/// antithetic replica.
#[derive(Debug, Clone)]
pub struct PathNoise {
    pub normals: Vec<f64>,
    /// `counts[k * n_atoms + i]`
    pub counts: Vec<f64>,
    /// `units[replica][k]`
    pub units: Vec<Vec<f64>>,
    /// Martingale part of `units`: `sigma dW + sum phi (dN - nu dt)`.
    pub martingale: Vec<Vec<f64>>,
}

impl PathNoise {
    fn new(plan: &StepPlan, replicas: usize) -> Self {
        let n = plan.n_steps();
        Self {
            normals: vec![0.0; n],
            counts: vec![0.0; n * plan.n_atoms()],
            units: vec![vec![0.0; n]; replicas],
            martingale: vec![vec![0.0; n]; replicas],
        }
    }

    fn fill(&mut self, plan: &StepPlan, rng: &mut ChaCha8Rng) {
        let na = plan.n_atoms();
        for k in 0..plan.n_steps() {
            self.normals[k] = rng.sample(StandardNormal);
            let mut jump = 0.0;
            for i in 0..na {
                let c = plan.poisson[i].as_ref().map_or(0.0, |d| d.sample(rng));
                self.counts[k * na + i] = c;
                jump += plan.phi[k][i] * (c - plan.nu_dt[i]);
            }
            let diffusion = plan.sigma[k] * plan.sqrt_dt * self.normals[k];
            for (r, sign) in [1.0, -1.0].into_iter().enumerate().take(self.units.len()) {
                let m = sign * diffusion + jump;
                self.martingale[r][k] = m;
                self.units[r][k] = plan.rho_dt[k] + m;
            }
        }
    }

    /// Brownian increment of replica `r` at step `k`.
    pub fn dw(&self, plan: &StepPlan, r: usize, k: usize) -> f64 {
        let sign = if r == 0 { 1.0 } else { -1.0 };
        sign * plan.sqrt_dt * self.normals[k]
    }
}

/// Runs `f` on every draw in `range` in parallel and returns the results in
/// draw order. The first error in draw order is reported.
pub fn for_each_draw<R: Send>(
    plan: &StepPlan,
    cfg: &SimConfig,
    range: std::ops::Range<usize>,
    f: impl Fn(usize, &PathNoise) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    cfg.validate()?;
    let replicas = cfg.replicas();
    let out: Vec<Result<R>> = range
        .into_par_iter()
        .map_init(
            || PathNoise::new(plan, replicas),
            |buf, p| {
                let mut rng = path_rng(cfg.seed, p as u64);
                buf.fill(plan, &mut rng);
                f(p, buf)
            },
        )
        .collect();
    out.into_iter().collect()
}

/// Terminal values of a primary `X` and twin `Z` driven by the same noise,
/// both using `u_k = alpha(s_k) Z_k` except on the first `spike_steps`
/// steps, where the primary uses the constant `spike_value`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_terminal(plan: &StepPlan, unit: &[f64], x: f64, z: f64, spike: Option<(usize, f64)>) -> (f64, f64) {
    let (mut xv, mut zv) = (x, z);
    for k in 0..plan.n_steps() {
        let uz = plan.alpha[k] * zv;
        let ux = match spike {
            Some((m, v)) if k < m => v,
            _ => uz,
        };
        xv = xv * plan.growth[k] + ux * unit[k];
        zv = zv * plan.growth[k] + uz * unit[k];
    }
    (xv, zv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub times: Vec<f64>,
    /// Rows are paths; with antithetic sampling rows `2p` and `2p + 1` share
    /// draw `p`.
    pub wealth: Vec<Vec<f64>>,
    pub twin_wealth: Option<Vec<Vec<f64>>>,
    /// `(step, atom)` for every jump, repeated for multiple arrivals.
    pub jump_log: Vec<Vec<(usize, usize)>>,
    /// Brownian increments per row and step.
    pub brownian: Vec<Vec<f64>>,
    pub replicas: usize,
    /// Index of the first draw in the bundle.
    pub first_draw: usize,
}

impl PathBundle {
    pub fn n_rows(&self) -> usize {
        self.wealth.len()
    }

    /// Control used on row `r` at step `k`: `alpha(s_k)` times the twin,
    /// or times the primary when unpaired.
    pub fn control(&self, plan: &StepPlan, r: usize, k: usize) -> f64 {
        let z = self.twin_wealth.as_ref().map_or(self.wealth[r][k], |t| t[r][k]);
        plan.alpha[k] * z
    }
}

/// Simulates full trajectories under `u = alpha(s) Z`, with `Z` the twin
/// started at `z_init` when `paired`, or the primary itself otherwise.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    params: &MarketParams,
    strategy: &LinearStrategy,
    t0: f64,
    x_init: f64,
    z_init: f64,
    cfg: &SimConfig,
    paired: bool,
) -> Result<PathBundle> {
    simulate_draws(params, strategy, t0, x_init, z_init, cfg, paired, 0..cfg.n_paths)
}

/// [`simulate`] restricted to a range of draws, for chunked processing.
#[allow(clippy::too_many_arguments)]
pub fn simulate_draws(
    params: &MarketParams,
    strategy: &LinearStrategy,
    t0: f64,
    x_init: f64,
    z_init: f64,
    cfg: &SimConfig,
    paired: bool,
    draws: std::ops::Range<usize>,
) -> Result<PathBundle> {
    let plan = StepPlan::new(params, strategy, t0, cfg.n_steps)?;
    simulate_with_plan(&plan, x_init, z_init, cfg, paired, draws)
}

pub(crate) fn simulate_with_plan(
    plan: &StepPlan,
    x_init: f64,
    z_init: f64,
    cfg: &SimConfig,
    paired: bool,
    draws: std::ops::Range<usize>,
) -> Result<PathBundle> {
    type Row = (Vec<f64>, Option<Vec<f64>>, Vec<(usize, usize)>, Vec<f64>);
    let first_draw = draws.start;
    let n = plan.n_steps();
    let na = plan.n_atoms();
    let rows: Vec<Vec<Row>> = for_each_draw(plan, cfg, draws, |p, noise| {
        let mut jumps = Vec::new();
        for k in 0..n {
            for i in 0..na {
                for _ in 0..noise.counts[k * na + i] as usize {
                    jumps.push((k, i));
                }
            }
        }
        let mut out = Vec::with_capacity(noise.units.len());
        for (r, unit) in noise.units.iter().enumerate() {
            let mut xs = Vec::with_capacity(n + 1);
            let mut zs = Vec::with_capacity(n + 1);
            let (mut xv, mut zv) = (x_init, if paired { z_init } else { x_init });
            xs.push(xv);
            zs.push(zv);
            for k in 0..n {
                let u = plan.alpha[k] * if paired { zv } else { xv };
                xv = xv * plan.growth[k] + u * unit[k];
                zv = zv * plan.growth[k] + plan.alpha[k] * zv * unit[k];
                xs.push(xv);
                zs.push(zv);
            }
            if !xv.is_finite() || !zv.is_finite() {
                return Err(Error::Simulation { path: p as u64 });
            }
            let dw = (0..n).map(|k| noise.dw(plan, r, k)).collect();
            out.push((xs, paired.then_some(zs), jumps.clone(), dw));
        }
        Ok(out)
    })?;
    let mut bundle = PathBundle {
        times: plan.times.clone(),
        wealth: Vec::new(),
        twin_wealth: paired.then(Vec::new),
        jump_log: Vec::new(),
        brownian: Vec::new(),
        replicas: cfg.replicas(),
        first_draw,
    };
    for (xs, zs, jumps, dw) in rows.into_iter().flatten() {
        bundle.wealth.push(xs);
        if let (Some(t), Some(z)) = (bundle.twin_wealth.as_mut(), zs) {
            t.push(z);
        }
        bundle.jump_log.push(jumps);
        bundle.brownian.push(dw);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketSpec;

    fn e0() -> MarketParams {
        MarketParams::new(MarketSpec::e0()).unwrap()
    }

    #[test]
    fn zero_strategy_is_deterministic_growth() {
        let b = simulate(&e0(), &LinearStrategy::zero(1.0), 0.0, 1.0, 1.0, &SimConfig::new(20, 500, 1), false).unwrap();
        for row in &b.wealth {
            assert_eq!(row[0], 1.0);
            assert!((row[500] - 0.02f64.exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn twin_matches_primary_on_the_diagonal() {
        let p = MarketParams::new(MarketSpec::e1()).unwrap();
        let s = LinearStrategy::constant(1.0, 0.8);
        let b = simulate(&p, &s, 0.2, 1.3, 1.3, &SimConfig::new(50, 100, 9).with_antithetic(true), true).unwrap();
        assert_eq!(b.n_rows(), 100);
        assert_eq!(&b.wealth, b.twin_wealth.as_ref().unwrap());
        assert!(b.jump_log.iter().any(|j| !j.is_empty()));
    }

    #[test]
    fn chunks_concatenate_to_the_full_run() {
        let p = MarketParams::new(MarketSpec::e1()).unwrap();
        let s = LinearStrategy::constant(1.0, 0.5);
        let cfg = SimConfig::new(30, 40, 3);
        let full = simulate(&p, &s, 0.0, 1.0, 0.5, &cfg, true).unwrap();
        let a = simulate_draws(&p, &s, 0.0, 1.0, 0.5, &cfg, true, 0..13).unwrap();
        let b = simulate_draws(&p, &s, 0.0, 1.0, 0.5, &cfg, true, 13..30).unwrap();
        assert_eq!(full.wealth, [a.wealth, b.wealth].concat());
    }

    #[test]
    fn rejects_start_at_horizon() {
        assert!(StepPlan::new(&e0(), &LinearStrategy::zero(1.0), 1.0, 10).is_err());
    }
}
