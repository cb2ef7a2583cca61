//! Explicit mean-variance equilibrium: the coefficient functions of the
//! quadratic/linear ansatz, the equilibrium feedback coefficient, and the
//! equilibrium objective value.

use crate::coeff::CoefficientFn;
use crate::error::{Error, Result};
use crate::fields::AnsatzFields;
use crate::model::MarketParams;
use crate::quadrature::{simpson, tail_integrals};
use crate::table::Table;

/// Tabulated closed-form solution on `quad_steps + 1` uniform nodes.
#[derive(Debug, Clone)]
pub struct ClosedFormSolution {
    pub n1: CoefficientFn,
    pub n2: CoefficientFn,
    pub m1: CoefficientFn,
    pub m2: CoefficientFn,
    pub m3: CoefficientFn,
    /// `L(s) = e^{-int_s^T r0} (1 + mu int_s^T e^{-int_tau^T r0} kappa rho)^{-1}`.
    pub l: CoefficientFn,
    pub alpha_star: CoefficientFn,
    /// `int_s^T r0` at the output nodes.
    discount: Vec<f64>,
    /// `int_s^T e^{-int_tau^T r0} kappa rho dtau` at the output nodes.
    premium: Vec<f64>,
}

/// Solves the closed forms with `quad_steps` Simpson panels.
pub fn solve_closed_form(params: &MarketParams, quad_steps: usize) -> Result<ClosedFormSolution> {
    if quad_steps < 2 {
        return Err(Error::Precondition(format!("quad_steps must be >= 2, got {quad_steps}")));
    }
    let horizon = params.horizon();
    let mu = params.mu();
    let fine = 2 * quad_steps;
    let h = horizon / fine as f64;
    let times: Vec<f64> = (0..=fine).map(|k| k as f64 * h).collect();

    let r0: Vec<f64> = times.iter().map(|&s| params.r0(s)).collect();
    let kr: Vec<f64> = times.iter().map(|&s| params.kappa_unchecked(s) * params.rho(s)).collect();

    let disc = tail_integrals(&r0, h);
    let integrand: Vec<f64> = disc.iter().zip(&kr).map(|(d, k)| (-d).exp() * k).collect();
    let prem = tail_integrals(&integrand, h);

    let n1: Vec<f64> = disc.iter().map(|d| d.exp()).collect();
    let n2: Vec<f64> = n1.iter().zip(&prem).map(|(n, k)| mu * n * k).collect();
    let m1: Vec<f64> = disc.iter().map(|d| (2.0 * d).exp()).collect();
    let m3: Vec<f64> = disc.iter().zip(&prem).map(|(d, k)| mu * (2.0 * d).exp() * k).collect();

    let chi: Vec<f64> = (0..=fine)
        .map(|k| {
            let sum = n1[k] + n2[k];
            let ratio = (sum + mu) / sum;
            2.0 * r0[k] + ratio * ratio * kr[k] - kr[k]
        })
        .collect();
    let chi_tail = tail_integrals(&chi, h);
    let source: Vec<f64> = (0..=fine)
        .map(|k| {
            let (a, b) = (n1[k], n2[k]);
            let sum = a + b;
            let brace = 2.0 * a * b / sum + (a * a + 2.0 * a * b) / (sum * sum) * mu;
            (-chi_tail[k]).exp() * kr[k] * brace
        })
        .collect();
    let source_tail = tail_integrals(&source, h);
    let m2: Vec<f64> = (0..=fine).map(|k| mu * chi_tail[k].exp() * source_tail[k]).collect();

    let l: Vec<f64> = (0..=fine).map(|k| (-disc[k]).exp() / (1.0 + mu * prem[k])).collect();
    let alpha: Vec<f64> = (0..=fine).map(|k| mu * l[k] * params.kappa_unchecked(times[k])).collect();

    let coarse = |v: &[f64]| -> CoefficientFn {
        let samples = v.iter().step_by(2).copied().collect();
        CoefficientFn::from_samples(horizon, samples).expect("finite closed-form table")
    };
    Ok(ClosedFormSolution {
        n1: coarse(&n1),
        n2: coarse(&n2),
        m1: coarse(&m1),
        m2: coarse(&m2),
        m3: coarse(&m3),
        l: coarse(&l),
        alpha_star: coarse(&alpha),
        discount: disc.iter().step_by(2).copied().collect(),
        premium: prem.iter().step_by(2).copied().collect(),
    })
}

impl ClosedFormSolution {
    pub fn horizon(&self) -> f64 {
        self.n1.horizon()
    }

    pub fn nodes(&self) -> usize {
        self.n1.samples().len()
    }

    /// `int_s^T r0` and `int_s^T e^{-int_tau^T r0} kappa rho` at an arbitrary
    /// `s`, from the nearest node on the right plus a local Simpson panel.
    fn tails_at(&self, params: &MarketParams, s: f64) -> (f64, f64) {
        let step = self.n1.step();
        let last = self.discount.len() - 1;
        let j = ((s / step).ceil() as usize).min(last);
        let sj = j as f64 * step;
        if (sj - s).abs() <= 1e-15 * self.horizon() {
            return (self.discount[j], self.premium[j]);
        }
        let local_disc = |tau: f64| self.discount[j] + simpson(|v| params.r0(v), tau, sj, 2);
        let disc = local_disc(s);
        let extra = simpson(
            |tau| (-local_disc(tau)).exp() * params.kappa_unchecked(tau) * params.rho(tau),
            s,
            sj,
            2,
        );
        (disc, self.premium[j] + extra)
    }

    /// Equilibrium coefficient in discounted form,
    /// `mu e^{-int_s^T r0} (1 + mu int_s^T e^{-int r0} kappa rho)^{-1} kappa(s)`.
    pub fn equilibrium_coefficient(&self, params: &MarketParams, s: f64) -> Result<f64> {
        params.check_time(s)?;
        let mu = params.mu();
        let (disc, prem) = self.tails_at(params, s);
        Ok(mu * (-disc).exp() / (1.0 + mu * prem) * params.kappa_unchecked(s))
    }

    /// Equilibrium coefficient in reduced form `mu kappa(s) / (N1(s) + N2(s))`.
    pub fn reduced_coefficient(&self, params: &MarketParams, s: f64) -> Result<f64> {
        params.check_time(s)?;
        let mu = params.mu();
        let (disc, prem) = self.tails_at(params, s);
        let n1 = disc.exp();
        let n2 = mu * n1 * prem;
        Ok(mu * params.kappa_unchecked(s) / (n1 + n2))
    }

    /// `J(t, w) = (M2 - N2^2 - 2 mu (N2 + N1)) w^2 / 2`.
    pub fn equilibrium_objective(&self, params: &MarketParams, t: f64, wealth: f64) -> Result<f64> {
        params.check_time(t)?;
        let mu = params.mu();
        let (n1, n2, m2) = (self.n1.eval(t), self.n2.eval(t), self.m2.eval(t));
        Ok((m2 - n2 * n2 - 2.0 * mu * (n2 + n1)) * wealth * wealth / 2.0)
    }

    pub fn fields(&self) -> AnsatzFields {
        AnsatzFields {
            n1: self.n1.clone(),
            n2: self.n2.clone(),
            m1: self.m1.clone(),
            m2: self.m2.clone(),
            m3: self.m3.clone(),
            alpha: self.alpha_star.clone(),
        }
    }

    /// Columns `s, N1, N2, M1, M2, M3, alpha_star, L`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["s", "N1", "N2", "M1", "M2", "M3", "alpha_star", "L"]);
        for (k, s) in self.n1.knots().enumerate() {
            t.push_numbers([
                s,
                self.n1.samples()[k],
                self.n2.samples()[k],
                self.m1.samples()[k],
                self.m2.samples()[k],
                self.m3.samples()[k],
                self.alpha_star.samples()[k],
                self.l.samples()[k],
            ]);
        }
        t
    }
}

/// Closed-form solution for an economy without jumps, where `kappa = rho /
/// sigma^2`.
pub fn no_jump_reduction(params: &MarketParams, quad_steps: usize) -> Result<ClosedFormSolution> {
    if !params.jumps().is_empty() {
        return Err(Error::Precondition(format!(
            "no-jump reduction needs an empty jump measure, got {} atoms",
            params.jumps().len()
        )));
    }
    solve_closed_form(params, quad_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketSpec;

    fn e0() -> MarketParams {
        MarketParams::new(MarketSpec::e0()).unwrap()
    }

    #[test]
    fn terminal_block() {
        let sol = solve_closed_form(&MarketParams::new(MarketSpec::e1()).unwrap(), 50).unwrap();
        assert_eq!(sol.n1.eval(1.0), 1.0);
        assert_eq!(sol.m1.eval(1.0), 1.0);
        assert_eq!(sol.n2.eval(1.0), 0.0);
        assert_eq!(sol.m2.eval(1.0), 0.0);
        assert_eq!(sol.m3.eval(1.0), 0.0);
    }

    #[test]
    fn e0_values() {
        let sol = solve_closed_form(&e0(), 1000).unwrap();
        assert!((sol.n1.eval(0.0) - 0.02f64.exp()).abs() < 1e-13);
        // N2(0) = e^{0.02} * 0.04 * (1 - e^{-0.02}) / 0.02
        let n2 = 0.02f64.exp() * 0.04 * (1.0 - (-0.02f64).exp()) / 0.02;
        assert!((sol.n2.eval(0.0) - n2).abs() < 1e-13);
        assert!((n2 - 0.040_402_68).abs() < 1e-8);
        let a0 = sol.equilibrium_coefficient(&e0(), 0.0).unwrap();
        // mu * kappa / (N1 + N2) with kappa = 1
        let exact = 1.0 / (0.02f64.exp() + n2);
        assert!((a0 - exact).abs() < 1e-12, "{a0}");
        assert!((a0 - 0.942_859).abs() < 5e-7, "{a0}");
    }

    #[test]
    fn zero_mu_kills_strategy_and_objective() {
        let p = e0().with_mu(0.0).unwrap();
        let sol = solve_closed_form(&p, 100).unwrap();
        assert_eq!(sol.equilibrium_coefficient(&p, 0.3).unwrap(), 0.0);
        assert!(sol.n2.max_abs() == 0.0 && sol.m2.max_abs() == 0.0);
        assert_eq!(sol.equilibrium_objective(&p, 0.2, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn objective_at_horizon() {
        let p = MarketParams::new(MarketSpec::e1().with_mu(0.7)).unwrap();
        let sol = solve_closed_form(&p, 100).unwrap();
        let j = sol.equilibrium_objective(&p, 1.0, 2.0).unwrap();
        assert!((j + 0.7 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn no_jump_reduction_rejects_atoms() {
        let p1 = MarketParams::new(MarketSpec::e1()).unwrap();
        assert!(matches!(no_jump_reduction(&p1, 10), Err(Error::Precondition(_))));
        let a = no_jump_reduction(&e0(), 200).unwrap();
        let b = solve_closed_form(&e0(), 200).unwrap();
        assert_eq!(a.m2, b.m2);
        assert_eq!(a.alpha_star, b.alpha_star);
    }

    #[test]
    fn off_node_coefficient_matches_nodes() {
        let p = MarketParams::new(MarketSpec::e1()).unwrap();
        let coarse = solve_closed_form(&p, 10).unwrap();
        let fine = solve_closed_form(&p, 1000).unwrap();
        for s in [0.0123, 0.5, 0.777] {
            let a = coarse.equilibrium_coefficient(&p, s).unwrap();
            let b = fine.equilibrium_coefficient(&p, s).unwrap();
            assert!((a - b).abs() < 1e-12, "{s}: {a} vs {b}");
        }
    }

    #[test]
    fn rejects_tiny_quadrature() {
        assert!(solve_closed_form(&e0(), 1).is_err());
    }
}
