//! Backward integration of the coupled Riccati-type system for
//! `(N1, N2, M1, M2, M3)` with classical RK4, without using the closed forms.

use crate::coeff::CoefficientFn;
use crate::error::{Error, Result};
use crate::fields::AnsatzFields;
use crate::model::{LinearStrategy, MarketParams};
use crate::table::Table;

/// Smallest admissible `|(M1 + M3) sigma_tot^2|` in the strategy formula.
pub const SINGULARITY_THRESHOLD: f64 = 1e-12;

/// Index order of the state vector.
const N1: usize = 0;
const N2: usize = 1;
const M1: usize = 2;
const M2: usize = 3;
const M3: usize = 4;

type State = [f64; 5];

/// How `alpha(s)` is obtained inside the right-hand side.
#[derive(Debug, Clone, Copy)]
pub enum AlphaRule<'a> {
    /// Recomputed from the current stage values via the first-order
    /// condition of the H-function.
    Equilibrium,
    /// A fixed strategy: the system then evaluates that strategy.
    Given(&'a LinearStrategy),
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub m3: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Maximum identity deviations over the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    /// `max |M1 - N1^2|`
    pub m1_dev: f64,
    /// `max |M3 - N1 N2|`
    pub m3_dev: f64,
}

fn equilibrium_alpha(params: &MarketParams, s: f64, y: &State) -> Result<f64> {
    let mu = params.mu();
    let sum_m = y[M1] + y[M3];
    let denom = sum_m * params.total_variance_rate(s);
    if !(denom.abs() >= SINGULARITY_THRESHOLD) {
        return Err(Error::Singular { s, value: denom });
    }
    let num = sum_m - y[N1] * mu - y[N1] * y[N1] - y[N1] * y[N2];
    Ok(-num / denom * params.rho(s))
}

fn alpha_at(params: &MarketParams, rule: AlphaRule<'_>, s: f64, y: &State) -> Result<f64> {
    match rule {
        AlphaRule::Equilibrium => equilibrium_alpha(params, s, y),
        AlphaRule::Given(strategy) => Ok(strategy.coefficient(s)),
    }
}

fn rhs(params: &MarketParams, rule: AlphaRule<'_>, s: f64, y: &State) -> Result<State> {
    let a = alpha_at(params, rule, s, y)?;
    let r0 = params.r0(s);
    let rho = params.rho(s);
    let var = params.total_variance_rate(s);
    Ok([
        -r0 * y[N1],
        -r0 * y[N2] - (y[N1] + y[N2]) * a * rho,
        -2.0 * r0 * y[M1],
        -2.0 * r0 * y[M2] - 2.0 * (y[M2] + y[M3]) * a * rho - (y[M1] + y[M2] + 2.0 * y[M3]) * a * a * var,
        -2.0 * r0 * y[M3] - (y[M3] + y[M1]) * a * rho,
    ])
}

fn axpy(y: &State, h: f64, k: &State) -> State {
    std::array::from_fn(|i| y[i] + h * k[i])
}

/// One RK4 step of signed size `h` from `(s, y)`.
fn rk4_step(params: &MarketParams, rule: AlphaRule<'_>, s: f64, y: &State, h: f64) -> Result<State> {
    let k1 = rhs(params, rule, s, y)?;
    let k2 = rhs(params, rule, s + 0.5 * h, &axpy(y, 0.5 * h, &k1))?;
    let k3 = rhs(params, rule, s + 0.5 * h, &axpy(y, 0.5 * h, &k2))?;
    let k4 = rhs(params, rule, s + h, &axpy(y, h, &k3))?;
    Ok(std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// Integrates from `s = T` down to `s = 0` in `n_steps` uniform RK4 steps.
pub fn integrate_backward(params: &MarketParams, n_steps: usize) -> Result<OdeSolution> {
    integrate_with(params, AlphaRule::Equilibrium, n_steps, 10)
}

/// Solves the same linear system for a fixed strategy, giving the ansatz
/// coefficients of its value functions.
pub fn evaluate_strategy(params: &MarketParams, strategy: &LinearStrategy, n_steps: usize) -> Result<OdeSolution> {
    integrate_with(params, AlphaRule::Given(strategy), n_steps, 1)
}

fn integrate_with(params: &MarketParams, rule: AlphaRule<'_>, n_steps: usize, min_steps: usize) -> Result<OdeSolution> {
    if n_steps < min_steps {
        return Err(Error::Precondition(format!("n_steps must be >= {min_steps}, got {n_steps}")));
    }
    let horizon = params.horizon();
    let h = horizon / n_steps as f64;
    let n = n_steps + 1;
    let mut out = OdeSolution {
        horizon,
        times: (0..n).map(|k| k as f64 * h).collect(),
        n1: vec![0.0; n],
        n2: vec![0.0; n],
        m1: vec![0.0; n],
        m2: vec![0.0; n],
        m3: vec![0.0; n],
        alpha: vec![0.0; n],
    };
    let mut y: State = [1.0, 0.0, 1.0, 0.0, 0.0];
    for k in (0..n).rev() {
        let s = out.times[k];
        out.n1[k] = y[N1];
        out.n2[k] = y[N2];
        out.m1[k] = y[M1];
        out.m2[k] = y[M2];
        out.m3[k] = y[M3];
        out.alpha[k] = alpha_at(params, rule, s, &y)?;
        if k > 0 {
            y = rk4_step(params, rule, s, &y, -h)?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular { s: out.times[k - 1], value: f64::NAN });
            }
        }
    }
    Ok(out)
}

/// Integrates forward from `s = 0` with initial values `start`, returning
/// the state at `s = T`.
pub fn integrate_forward(params: &MarketParams, rule: AlphaRule<'_>, start: [f64; 5], n_steps: usize) -> Result<[f64; 5]> {
    let h = params.horizon() / n_steps as f64;
    let mut y = start;
    for k in 0..n_steps {
        y = rk4_step(params, rule, k as f64 * h, &y, h)?;
    }
    Ok(y)
}

pub fn check_identities(sol: &OdeSolution) -> IdentityReport {
    let mut rep = IdentityReport { m1_dev: 0.0, m3_dev: 0.0 };
    for k in 0..sol.times.len() {
        rep.m1_dev = rep.m1_dev.max((sol.m1[k] - sol.n1[k] * sol.n1[k]).abs());
        rep.m3_dev = rep.m3_dev.max((sol.m3[k] - sol.n1[k] * sol.n2[k]).abs());
    }
    rep
}

impl OdeSolution {
    pub fn initial_state(&self) -> [f64; 5] {
        [self.n1[0], self.n2[0], self.m1[0], self.m2[0], self.m3[0]]
    }

    fn coeff(&self, v: &[f64]) -> CoefficientFn {
        CoefficientFn::from_samples(self.horizon, v.to_vec()).expect("finite ODE table")
    }

    pub fn fields(&self) -> AnsatzFields {
        AnsatzFields {
            n1: self.coeff(&self.n1),
            n2: self.coeff(&self.n2),
            m1: self.coeff(&self.m1),
            m2: self.coeff(&self.m2),
            m3: self.coeff(&self.m3),
            alpha: self.coeff(&self.alpha),
        }
    }

    pub fn strategy(&self) -> LinearStrategy {
        LinearStrategy::new(self.coeff(&self.alpha))
    }

    /// Same columns as the closed-form export, with `L = 1 / (N1 + N2)`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["s", "N1", "N2", "M1", "M2", "M3", "alpha_star", "L"]);
        for k in 0..self.times.len() {
            t.push_numbers([
                self.times[k],
                self.n1[k],
                self.n2[k],
                self.m1[k],
                self.m2[k],
                self.m3[k],
                self.alpha[k],
                1.0 / (self.n1[k] + self.n2[k]),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketSpec;

    #[test]
    fn terminal_node_is_exact() {
        let p = MarketParams::new(MarketSpec::e1()).unwrap();
        let sol = integrate_backward(&p, 20).unwrap();
        let last = sol.times.len() - 1;
        assert_eq!(
            [sol.n1[last], sol.n2[last], sol.m1[last], sol.m2[last], sol.m3[last]],
            [1.0, 0.0, 1.0, 0.0, 0.0]
        );
        let rep = check_identities(&OdeSolution {
            times: vec![1.0],
            n1: vec![1.0],
            n2: vec![0.0],
            m1: vec![1.0],
            m2: vec![0.0],
            m3: vec![0.0],
            alpha: vec![0.0],
            horizon: 1.0,
        });
        assert_eq!(rep, IdentityReport { m1_dev: 0.0, m3_dev: 0.0 });
    }

    #[test]
    fn zero_mu_is_pure_discounting() {
        let p = MarketParams::new(MarketSpec::e0().with_mu(0.0)).unwrap();
        let sol = integrate_backward(&p, 100).unwrap();
        for k in 0..sol.times.len() {
            // alpha is recomputed from unreduced M1 - N1^2, so zeros hold to roundoff
            assert!(sol.n2[k].abs() < 1e-14);
            assert!(sol.m2[k].abs() < 1e-14);
            assert!(sol.m3[k].abs() < 1e-14);
            assert!(sol.alpha[k].abs() < 1e-14);
            let exact = (0.02 * (1.0 - sol.times[k])).exp();
            assert!((sol.n1[k] - exact).abs() < 1e-12);
            assert!((sol.m1[k] - sol.n1[k] * sol.n1[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_coarse_grids() {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        assert!(matches!(integrate_backward(&p, 5), Err(Error::Precondition(_))));
    }

    #[test]
    fn singular_denominator_is_reported() {
        // a strategy-free start with M1 + M3 = 0 trips the guard at the first stage
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        let err = integrate_forward(&p, AlphaRule::Equilibrium, [1.0, 0.0, 0.0, 0.0, 0.0], 10).unwrap_err();
        assert!(matches!(err, Error::Singular { s, .. } if s == 0.0));
    }
}
