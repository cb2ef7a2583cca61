//! Monte Carlo estimators of the value functions and of the cost.

use super::sim::{for_each_draw, pair_terminal, SimConfig, StepPlan};
use crate::error::{Error, Result};
use crate::model::{LinearStrategy, MarketParams};
use crate::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: usize,
}

impl McEstimate {
    pub fn exact(value: f64, n_effective: usize) -> Self {
        Self { mean: value, std_error: 0.0, n_effective }
    }

    /// Sample mean and standard error of i.i.d. samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n > 0 && samples.iter().all(|&x| x == samples[0]) {
            return Self::exact(samples[0], n);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            f64::INFINITY
        } else {
            let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, std_error, n_effective: n }
    }

    /// `|mean - target| <= k * std_error`, treating a zero error as exact up
    /// to `abs_tol`.
    pub fn agrees_with(&self, target: f64, k: f64, abs_tol: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + abs_tol
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Terminal `(X(T), Z(T))` for every replica of every draw.
fn terminal_values(plan: &StepPlan, cfg: &SimConfig, x: f64, z: f64, spike: Option<(usize, f64)>) -> Result<Vec<Vec<(f64, f64)>>> {
    for_each_draw(plan, cfg, 0..cfg.n_paths, |p, noise| {
        noise
            .units
            .iter()
            .map(|unit| {
                let (xt, zt) = pair_terminal(plan, unit, x, z, spike);
                if xt.is_finite() && zt.is_finite() {
                    Ok((xt, zt))
                } else {
                    Err(Error::Simulation { path: p as u64 })
                }
            })
            .collect()
    })
}

fn payoff_estimate(
    params: &MarketParams,
    strategy: &LinearStrategy,
    s: f64,
    x: f64,
    z: f64,
    cfg: &SimConfig,
    payoff: impl Fn(f64) -> f64,
) -> Result<McEstimate> {
    params.check_time(s)?;
    cfg.validate()?;
    if s >= params.horizon() {
        return Ok(McEstimate::exact(payoff(x), cfg.n_paths));
    }
    let plan = StepPlan::new(params, strategy, s, cfg.n_steps)?;
    let values = terminal_values(&plan, cfg, x, z, None)?;
    let samples: Vec<f64> = values.iter().map(|reps| mean(&reps.iter().map(|&(xt, _)| payoff(xt)).collect::<Vec<_>>())).collect();
    Ok(McEstimate::from_samples(&samples))
}

/// `E[X(T)^2 / 2]` for the pair started at `(s, x, z)`.
pub fn estimate_theta(params: &MarketParams, strategy: &LinearStrategy, s: f64, x: f64, z: f64, cfg: &SimConfig) -> Result<McEstimate> {
    payoff_estimate(params, strategy, s, x, z, cfg, |v| 0.5 * v * v)
}

/// `E[X(T)]` for the pair started at `(s, x, z)`.
pub fn estimate_g(params: &MarketParams, strategy: &LinearStrategy, s: f64, x: f64, z: f64, cfg: &SimConfig) -> Result<McEstimate> {
    payoff_estimate(params, strategy, s, x, z, cfg, |v| v)
}

/// Control rule for [`evaluate_cost`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    /// `u = alpha(s) X(s)`.
    Strategy,
    /// `u = v` on `[t, t + eps)`, then `alpha(s)` times the unperturbed state.
    Spike { v: f64, eps: f64 },
}

/// Delta-method influence of `J = Var[X]/2 - mu y E[X]` at sample `x`.
pub(crate) fn cost_influence(x: f64, mean_x: f64, mu_y: f64) -> f64 {
    0.5 * x * x - (mean_x + mu_y) * x
}

pub(crate) fn cost_from_terminal(values: &[f64], mu_y: f64) -> f64 {
    let m = mean(values);
    let m2 = values.iter().map(|x| x * x).sum::<f64>() / values.len() as f64;
    0.5 * (m2 - m * m) - mu_y * m
}

/// `J(t, y) = Var_t[X(T)]/2 - mu y E_t[X(T)]` started from `(t, y, y)`, with
/// a delta-method standard error.
pub fn evaluate_cost(params: &MarketParams, strategy: &LinearStrategy, control: Control, t: f64, y: f64, cfg: &SimConfig) -> Result<McEstimate> {
    params.check_time(t)?;
    cfg.validate()?;
    let horizon = params.horizon();
    if !(t < horizon) {
        return Err(Error::Precondition(format!("cost time {t} must be before the horizon {horizon}")));
    }
    let plan = StepPlan::new(params, strategy, t, cfg.n_steps)?;
    let spike = match control {
        Control::Strategy => None,
        Control::Spike { v, eps } => {
            if !(eps > 0.0 && eps <= horizon - t) {
                return Err(Error::Precondition(format!("spike length {eps} must lie in (0, {}]", horizon - t)));
            }
            Some((plan.steps_for(eps), v))
        }
    };
    let values = terminal_values(&plan, cfg, y, y, spike)?;
    let mu_y = params.mu() * y;
    let flat: Vec<f64> = values.iter().flatten().map(|&(xt, _)| xt).collect();
    let m = mean(&flat);
    let samples: Vec<f64> = values
        .iter()
        .map(|reps| mean(&reps.iter().map(|&(xt, _)| cost_influence(xt, m, mu_y)).collect::<Vec<_>>()))
        .collect();
    let se = McEstimate::from_samples(&samples).std_error;
    Ok(McEstimate { mean: cost_from_terminal(&flat, mu_y), std_error: se, n_effective: values.len() })
}

/// Estimates as CSV: `quantity,value,std_error,n_paths,seed`.
pub fn estimates_table<'a>(rows: impl IntoIterator<Item = (&'a str, McEstimate)>, seed: u64) -> Table {
    let mut t = Table::new(["quantity", "value", "std_error", "n_paths", "seed"]);
    for (name, e) in rows {
        t.push_row(vec![
            Cell::from(name),
            Cell::from(e.mean),
            Cell::from(e.std_error),
            Cell::from(e.n_effective),
            Cell::from(seed),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketSpec;

    fn e0() -> MarketParams {
        MarketParams::new(MarketSpec::e0()).unwrap()
    }

    #[test]
    fn horizon_start_is_exact() {
        let cfg = SimConfig::new(10, 10, 1);
        let s = LinearStrategy::constant(1.0, 1.0);
        let th = estimate_theta(&e0(), &s, 1.0, 3.0, 2.0, &cfg).unwrap();
        assert_eq!((th.mean, th.std_error), (4.5, 0.0));
        let g = estimate_g(&e0(), &s, 1.0, 3.0, 2.0, &cfg).unwrap();
        assert_eq!((g.mean, g.std_error), (3.0, 0.0));
    }

    #[test]
    fn zero_strategy_without_jumps_is_deterministic() {
        let cfg = SimConfig::new(200, 100, 4);
        let zero = LinearStrategy::zero(1.0);
        let th = estimate_theta(&e0(), &zero, 0.0, 2.0, 5.0, &cfg).unwrap();
        assert!((th.mean - 2.0 * 0.04f64.exp()).abs() < 1e-12);
        assert_eq!(th.std_error, 0.0);
        let g = estimate_g(&e0(), &zero, 0.0, 2.0, 5.0, &cfg).unwrap();
        assert!((g.mean - 2.0 * 0.02f64.exp()).abs() < 1e-12);
        let j = evaluate_cost(&e0(), &zero, Control::Strategy, 0.0, 1.5, &cfg).unwrap();
        assert!((j.mean + 1.5 * 1.5 * 0.02f64.exp()).abs() < 1e-12, "{j:?}");
        assert!(j.std_error < 1e-12);
    }

    #[test]
    fn spike_length_is_checked() {
        let s = LinearStrategy::constant(1.0, 1.0);
        let cfg = SimConfig::new(10, 10, 1);
        assert!(evaluate_cost(&e0(), &s, Control::Spike { v: 1.0, eps: 0.8 }, 0.5, 1.0, &cfg).is_err());
        assert!(evaluate_cost(&e0(), &s, Control::Spike { v: 1.0, eps: 0.0 }, 0.5, 1.0, &cfg).is_err());
    }

    #[test]
    fn csv_columns() {
        let t = estimates_table([("g", McEstimate::exact(1.0, 5))], 42);
        assert_eq!(t.to_csv_string(&[]), "quantity,value,std_error,n_paths,seed\ng,1e0,0e0,5,42\n");
    }
}
