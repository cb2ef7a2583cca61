//! The H-function of the mean-variance problem for value fields computed
//! under a linear strategy.

use crate::error::{Error, Result};
use crate::fields::ValueFields;
use crate::model::MarketParams;

/// `H(t, y, s, X, Z, u)` for fields `theta`, `g` of the strategy
/// `alpha(s) z`.
///
/// The conditional expectation of `g(s, X, Z)` given time `t` is replaced by
/// `g(s, X, Z)`, which is exact for deterministic arguments such as the
/// diagonal `t = s`, `X = Z = y`.
#[allow(clippy::too_many_arguments)]
pub fn h_function<F: ValueFields + ?Sized>(
    params: &MarketParams,
    fields: &F,
    t: f64,
    y: f64,
    s: f64,
    x: f64,
    z: f64,
    u: f64,
) -> Result<f64> {
    params.check_time(t)?;
    params.check_time(s)?;
    if !fields.contains(x, z) {
        return Err(Error::OffGrid { x, z });
    }
    let d = fields.derivatives(s, x, z);
    let w = params.mu() * y + d.g;
    let sig = params.sigma(s);
    let strat = fields.strategy_coefficient(s) * z;
    let mut h = 0.5 * (d.theta_xx - w * d.g_xx) * sig * sig * u * u
        + (d.theta_x - w * d.g_x) * (params.r0(s) * x + u * params.rho(s))
        + (d.theta_xz - w * d.g_xz) * u * strat * sig * sig;
    for (nu, phi) in params.jump_coefficients(s) {
        let (xs, zs) = (x + u * phi, z + strat * phi);
        h += nu * (fields.theta(s, xs, zs) - d.theta_x * u * phi);
        h -= w * nu * (fields.g(s, xs, zs) - d.g_x * u * phi);
    }
    Ok(h)
}

/// Quadratic coefficient of `u -> H(s, z, s, z, z, u)` predicted by the
/// quadratic ansatz: `M1(s) sigma_tot(s)^2 / 2`.
pub fn diagonal_curvature<F: ValueFields + ?Sized>(params: &MarketParams, fields: &F, s: f64, z: f64) -> Result<f64> {
    let a = h_function(params, fields, s, z, s, z, z, 1.0)?;
    let b = h_function(params, fields, s, z, s, z, z, 0.0)?;
    let c = h_function(params, fields, s, z, s, z, z, -1.0)?;
    Ok(0.5 * (a - 2.0 * b + c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::solve_closed_form;
    use crate::model::MarketSpec;

    #[test]
    fn equilibrium_action_minimises_on_the_diagonal() {
        for spec in [MarketSpec::e0(), MarketSpec::e1()] {
            let p = MarketParams::new(spec).unwrap();
            let cf = solve_closed_form(&p, 400).unwrap();
            let f = cf.fields();
            for &(s, z) in &[(0.0, 1.0), (0.5, -0.7), (0.9, 2.0)] {
                let u0 = cf.alpha_star.eval(s) * z;
                let h0 = h_function(&p, &f, s, z, s, z, z, u0).unwrap();
                for du in [-1e-3, 1e-3] {
                    assert!(h_function(&p, &f, s, z, s, z, z, u0 + du).unwrap() >= h0);
                }
                // dense scan oracle
                let best = (0..=4000)
                    .map(|k| u0 - 2.0 + k as f64 * 1e-3)
                    .min_by(|a, b| {
                        let ha = h_function(&p, &f, s, z, s, z, z, *a).unwrap();
                        let hb = h_function(&p, &f, s, z, s, z, z, *b).unwrap();
                        ha.total_cmp(&hb)
                    })
                    .unwrap();
                assert!((best - u0).abs() <= 1e-3, "{best} vs {u0}");
            }
        }
    }

    #[test]
    fn zero_mu_gap_is_m1_quadratic() {
        let p = MarketParams::new(MarketSpec::e1().with_mu(0.0)).unwrap();
        let cf = solve_closed_form(&p, 100).unwrap();
        let f = cf.fields();
        let s = 0.3;
        let m1 = cf.m1.eval(s);
        for u in [-1.0, 0.4, 2.5] {
            let gap = h_function(&p, &f, s, 1.0, s, 1.0, 1.0, u).unwrap()
                - h_function(&p, &f, s, 1.0, s, 1.0, 1.0, 0.0).unwrap();
            let pred = 0.5 * m1 * p.total_variance_rate(s) * u * u;
            assert!((gap - pred).abs() < 1e-12, "{gap} {pred}");
        }
        assert!((diagonal_curvature(&p, &f, s, 1.0).unwrap() - 0.5 * m1 * p.total_variance_rate(s)).abs() < 1e-12);
    }

    #[test]
    fn self_difference_is_zero() {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        let f = solve_closed_form(&p, 100).unwrap().fields();
        let u = f.alpha.eval(0.2) * 0.8;
        let a = h_function(&p, &f, 0.2, 0.8, 0.2, 0.8, 0.8, u).unwrap();
        assert_eq!(a - h_function(&p, &f, 0.2, 0.8, 0.2, 0.8, 0.8, u).unwrap(), 0.0);
    }

    #[test]
    fn rejects_times_outside_horizon() {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        let f = solve_closed_form(&p, 100).unwrap().fields();
        assert!(matches!(
            h_function(&p, &f, 0.0, 1.0, 1.5, 1.0, 1.0, 0.0),
            Err(Error::TimeOutOfRange { .. })
        ));
    }
}
