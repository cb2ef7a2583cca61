//! Spike-variation test: the cost change when the control is replaced by a
//! constant on `[t, t + eps)`, divided by `eps`, estimated with common
//! random numbers against the unperturbed run.

use super::estimate::{cost_from_terminal, cost_influence, mean};
use super::sim::{for_each_draw, SimConfig, StepPlan};
use crate::error::{Error, Result};
use crate::fields::ValueFields;
use crate::model::{LinearStrategy, MarketParams};
use crate::pide::h_function;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeQuotient {
    pub eps: f64,
    /// Spike length actually simulated: a whole number of Euler steps.
    pub eps_effective: f64,
    pub quotient: f64,
    pub std_error: f64,
    /// Standard error without the control variate.
    pub raw_std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeReport {
    pub t: f64,
    pub y: f64,
    pub v: f64,
    pub quotients: Vec<SpikeQuotient>,
    /// Intercept of the least-squares line `Q = Q0 + c eps`.
    pub limit: f64,
    pub limit_se: f64,
    pub slope: f64,
    /// `H(t, y, t, y, y, v) - H(t, y, t, y, y, alpha(t) y)`.
    pub h_gap: f64,
    pub n_effective: usize,
}

impl SpikeReport {
    /// Every quotient is at least `-(k SE + |c| eps)`.
    pub fn one_sided_ok(&self, k: f64) -> bool {
        self.quotients
            .iter()
            .all(|q| q.quotient >= -(k * q.std_error + self.slope.abs() * q.eps_effective))
    }

    /// Some quotient lies below `-k SE`.
    pub fn has_negative(&self, k: f64) -> bool {
        self.quotients.iter().any(|q| q.quotient < -k * q.std_error)
    }

    pub fn limit_matches(&self, target: f64, k: f64) -> bool {
        (self.limit - target).abs() <= k * self.limit_se
    }
}

/// Per replica: unperturbed terminal wealth, then for every `(v, eps)` the
/// perturbed terminal wealth and the control-variate value.
struct DrawOutput {
    base: Vec<f64>,
    perturbed: Vec<Vec<f64>>,
    cv: Vec<Vec<f64>>,
}

/// [`spike_variation_test`] for several perturbation values at once, all on
/// the same noise.
#[allow(clippy::too_many_arguments)]
pub fn spike_variation_batch<F: ValueFields + ?Sized>(
    params: &MarketParams,
    strategy: &LinearStrategy,
    fields: &F,
    t: f64,
    y: f64,
    values: &[f64],
    epsilons: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<SpikeReport>> {
    params.check_time(t)?;
    let horizon = params.horizon();
    if epsilons.is_empty() || values.is_empty() {
        return Err(Error::Precondition("need at least one spike value and one length".into()));
    }
    if let Some(e) = epsilons.iter().find(|&&e| !(e > 0.0 && e < horizon - t)) {
        return Err(Error::Precondition(format!("spike length {e} must lie in (0, {})", horizon - t)));
    }
    let plan = StepPlan::new(params, strategy, t, cfg.n_steps)?;
    let steps: Vec<usize> = epsilons.iter().map(|&e| plan.steps_for(e)).collect();
    if let Some(i) = steps.iter().position(|&m| m == 0 || m >= plan.n_steps()) {
        return Err(Error::Precondition(format!(
            "spike length {} is not resolved by the Euler step {}",
            epsilons[i], plan.dt
        )));
    }
    let max_m = *steps.iter().max().unwrap();
    let n = plan.n_steps();
    // growth from step m to the horizon
    let mut tail_growth = vec![1.0; n + 1];
    for k in (0..n).rev() {
        tail_growth[k] = tail_growth[k + 1] * plan.growth[k];
    }
    let cases: Vec<(f64, usize)> = values.iter().flat_map(|&v| steps.iter().map(move |&m| (v, m))).collect();

    let draws = for_each_draw(&plan, cfg, 0..cfg.n_paths, |p, noise| {
        let reps = noise.units.len();
        let mut out = DrawOutput {
            base: Vec::with_capacity(reps),
            perturbed: vec![Vec::with_capacity(reps); cases.len()],
            cv: vec![Vec::with_capacity(reps); cases.len()],
        };
        let mut twin = vec![0.0; max_m + 1];
        for r in 0..reps {
            let unit = &noise.units[r];
            let mart = &noise.martingale[r];
            let mut z = y;
            for k in 0..n {
                if k <= max_m {
                    twin[k] = z;
                }
                z = z * plan.growth[k] + plan.alpha[k] * z * unit[k];
            }
            if !z.is_finite() {
                return Err(Error::Simulation { path: p as u64 });
            }
            out.base.push(z);
            for (c, &(v, m)) in cases.iter().enumerate() {
                let (mut x, mut cv) = (y, 0.0);
                for k in 0..m {
                    let gap = v - plan.alpha[k] * twin[k];
                    x = x * plan.growth[k] + v * unit[k];
                    cv += gap * mart[k];
                }
                let xt = z + (x - twin[m]) * tail_growth[m];
                out.perturbed[c].push(xt);
                out.cv[c].push(cv);
            }
        }
        Ok(out)
    })?;

    let mu_y = params.mu() * y;
    let n_draws = draws.len();
    let base_flat: Vec<f64> = draws.iter().flat_map(|d| d.base.iter().copied()).collect();
    let base_mean = mean(&base_flat);
    let base_cost = cost_from_terminal(&base_flat, mu_y);
    let base_infl: Vec<f64> = draws
        .iter()
        .map(|d| mean(&d.base.iter().map(|&x| cost_influence(x, base_mean, mu_y)).collect::<Vec<_>>()))
        .collect();
    let alpha_t = fields.strategy_coefficient(t);
    let h_ref = h_function(params, fields, t, y, t, y, y, alpha_t * y)?;

    let mut reports = Vec::with_capacity(values.len());
    for (vi, &v) in values.iter().enumerate() {
        let mut quotients = Vec::with_capacity(steps.len());
        // per-draw adjusted influence of each quotient
        let mut infl: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        for (ei, (&eps, &m)) in epsilons.iter().zip(&steps).enumerate() {
            let c = vi * steps.len() + ei;
            let flat: Vec<f64> = draws.iter().flat_map(|d| d.perturbed[c].iter().copied()).collect();
            let pm = mean(&flat);
            let diff = cost_from_terminal(&flat, mu_y) - base_cost;
            let psi: Vec<f64> = draws
                .iter()
                .zip(&base_infl)
                .map(|(d, b)| mean(&d.perturbed[c].iter().map(|&x| cost_influence(x, pm, mu_y)).collect::<Vec<_>>()) - b)
                .collect();
            let cvs: Vec<f64> = draws.iter().map(|d| mean(&d.cv[c])).collect();
            let (psi_m, cv_m) = (mean(&psi), mean(&cvs));
            let (mut cov, mut var) = (0.0, 0.0);
            for (a, b) in psi.iter().zip(&cvs) {
                cov += (a - psi_m) * (b - cv_m);
                var += (b - cv_m) * (b - cv_m);
            }
            let beta = if var > 0.0 { cov / var } else { 0.0 };
            let eps_eff = m as f64 * plan.dt;
            let adjusted: Vec<f64> = psi.iter().zip(&cvs).map(|(a, b)| (a - beta * b) / eps_eff).collect();
            let raw: Vec<f64> = psi.iter().map(|a| a / eps_eff).collect();
            quotients.push(SpikeQuotient {
                eps,
                eps_effective: eps_eff,
                quotient: (diff - beta * cv_m) / eps_eff,
                std_error: std_error(&adjusted),
                raw_std_error: std_error(&raw),
            });
            infl.push(adjusted);
        }
        let (weights, slope_weights) = line_weights(&quotients.iter().map(|q| q.eps_effective).collect::<Vec<_>>());
        let limit = weights.iter().zip(&quotients).map(|(w, q)| w * q.quotient).sum();
        let slope = slope_weights.iter().zip(&quotients).map(|(w, q)| w * q.quotient).sum();
        let combined: Vec<f64> = (0..n_draws).map(|d| weights.iter().zip(&infl).map(|(w, f)| w * f[d]).sum()).collect();
        reports.push(SpikeReport {
            t,
            y,
            v,
            quotients,
            limit,
            limit_se: std_error(&combined),
            slope,
            h_gap: h_function(params, fields, t, y, t, y, y, v)? - h_ref,
            n_effective: n_draws,
        });
    }
    Ok(reports)
}

fn std_error(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let m = mean(samples);
    (samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
}

/// Weights giving the intercept and slope of the least-squares line through
/// points with abscissae `xs`. A single point yields its value and slope 0.
fn line_weights(xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let det = n * sxx - sx * sx;
    if xs.len() < 2 || det.abs() <= 1e-14 * sxx.max(1.0) {
        return (vec![1.0 / n; xs.len()], vec![0.0; xs.len()]);
    }
    (
        xs.iter().map(|x| (sxx - sx * x) / det).collect(),
        xs.iter().map(|x| (n * x - sx) / det).collect(),
    )
}

/// Difference quotients `(J^eps - J) / eps` for the spike `u = v` on
/// `[t, t + eps)` against the unperturbed rule, their extrapolated limit,
/// and the H-function gap predicted from `fields`.
#[allow(clippy::too_many_arguments)]
pub fn spike_variation_test<F: ValueFields + ?Sized>(
    params: &MarketParams,
    strategy: &LinearStrategy,
    fields: &F,
    t: f64,
    y: f64,
    v: f64,
    epsilons: &[f64],
    cfg: &SimConfig,
) -> Result<SpikeReport> {
    Ok(spike_variation_batch(params, strategy, fields, t, y, &[v], epsilons, cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_weights_recover_line() {
        let xs = [0.04, 0.02, 0.01];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 3.0 * x).collect();
        let (w, s) = line_weights(&xs);
        let a: f64 = w.iter().zip(&ys).map(|(w, y)| w * y).sum();
        let b: f64 = s.iter().zip(&ys).map(|(w, y)| w * y).sum();
        assert!((a - 1.5).abs() < 1e-12 && (b + 3.0).abs() < 1e-10);
        let (w1, s1) = line_weights(&[0.1]);
        assert_eq!((w1, s1), (vec![1.0], vec![0.0]));
    }
}
