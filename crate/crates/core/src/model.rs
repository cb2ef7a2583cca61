//! Market data for the mean-variance economy: deterministic coefficients, a
//! finite-atom jump measure, and linear feedback strategies.

use std::fmt;

use crate::coeff::CoefficientFn;
use crate::error::{Error, Result};

/// Default lower bound on `sigma^2 + sum_i phi_i^2 nu_i`.
pub const DEFAULT_ELLIPTICITY_EPS: f64 = 1e-10;

/// Relative slack when checking that a time lies in `[0, T]`.
const TIME_SLACK: f64 = 1e-12;

/// One atom `(e_i, nu_i)` of the jump measure together with the jump
/// coefficient `phi(s, e_i)` of the risky asset.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyAtom {
    pub size: f64,
    pub intensity: f64,
    pub coefficient: CoefficientFn,
}

/// Finite-activity jump measure `sum_i nu_i delta_{e_i}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevyAtomMeasure {
    pub atoms: Vec<LevyAtom>,
}

impl LevyAtomMeasure {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn total_intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.intensity).sum()
    }

    /// `sum_i phi(s, e_i)^2 nu_i`.
    pub fn second_moment(&self, s: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let c = a.coefficient.eval(s);
                c * c * a.intensity
            })
            .sum()
    }
}

/// Raw, unchecked market description. Turn it into [`MarketParams`] with
/// [`MarketParams::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub r0: CoefficientFn,
    pub r: CoefficientFn,
    pub sigma: CoefficientFn,
    pub jumps: LevyAtomMeasure,
    pub horizon: f64,
    pub mu: f64,
    pub x0: f64,
    pub ellipticity_eps: f64,
}

impl MarketSpec {
    /// Constant-coefficient economy without jumps.
    pub fn constant(r0: f64, r: f64, sigma: f64, mu: f64, horizon: f64, x0: f64) -> Self {
        Self {
            r0: CoefficientFn::constant(horizon, r0),
            r: CoefficientFn::constant(horizon, r),
            sigma: CoefficientFn::constant(horizon, sigma),
            jumps: LevyAtomMeasure::none(),
            horizon,
            mu,
            x0,
            ellipticity_eps: DEFAULT_ELLIPTICITY_EPS,
        }
    }

    /// Adds an atom with a constant jump coefficient.
    pub fn with_atom(mut self, size: f64, intensity: f64, coefficient: f64) -> Self {
        self.jumps.atoms.push(LevyAtom {
            size,
            intensity,
            coefficient: CoefficientFn::constant(self.horizon, coefficient),
        });
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Economy E0: `r0 = 2%`, `r = 6%`, `sigma = 0.2`, no jumps, `mu = 1`,
    /// `T = 1`, `x0 = 1`.
    pub fn e0() -> Self {
        Self::constant(0.02, 0.06, 0.2, 1.0, 1.0, 1.0)
    }

    /// Economy E1: E0 plus one atom of intensity 2 with jump coefficient -0.1.
    pub fn e1() -> Self {
        Self::e0().with_atom(1.0, 2.0, -0.1)
    }

    fn check_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self
            .r0
            .knots()
            .chain(self.r.knots())
            .chain(self.sigma.knots())
            .chain(self.jumps.atoms.iter().flat_map(|a| a.coefficient.knots()))
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        // midpoints catch interior minima of the quadratic ellipticity term
        let mids: Vec<f64> = ts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        ts.extend(mids);
        ts.sort_by(f64::total_cmp);
        ts
    }

    /// Lists every violated standing assumption. An empty report means the
    /// description is usable.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(Violation::Horizon(self.horizon));
            return ValidationReport { violations: v };
        }
        let named = [("r0", &self.r0), ("r", &self.r), ("sigma", &self.sigma)];
        for (name, f) in named {
            if (f.horizon() - self.horizon).abs() > TIME_SLACK * self.horizon {
                v.push(Violation::HorizonMismatch { name: name.to_string(), horizon: f.horizon() });
            }
        }
        for (i, atom) in self.jumps.atoms.iter().enumerate() {
            if (atom.coefficient.horizon() - self.horizon).abs() > TIME_SLACK * self.horizon {
                v.push(Violation::HorizonMismatch {
                    name: format!("jumps[{i}].coefficient"),
                    horizon: atom.coefficient.horizon(),
                });
            }
            if !(atom.intensity >= 0.0 && atom.intensity.is_finite()) {
                v.push(Violation::NegativeIntensity { atom: i, intensity: atom.intensity });
            }
            if let Some((s, c)) = atom
                .coefficient
                .knots()
                .zip(atom.coefficient.samples())
                .find(|(_, &c)| c < -1.0)
            {
                v.push(Violation::LimitedLiability { atom: i, s, value: *c });
            }
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            v.push(Violation::RiskAversion(self.mu));
        }
        if !self.x0.is_finite() {
            v.push(Violation::InitialWealth(self.x0));
        }
        if !(self.ellipticity_eps > 0.0) {
            v.push(Violation::EllipticityBound(self.ellipticity_eps));
        }
        let times = self.check_times();
        if let Some(&s) = times.iter().find(|&&s| self.r.eval(s) - self.r0.eval(s) <= 0.0) {
            v.push(Violation::ExcessReturn { s, value: self.r.eval(s) - self.r0.eval(s) });
        }
        let eps = self.ellipticity_eps.max(0.0);
        if let Some(&s) = times.iter().find(|&&s| {
            let sig = self.sigma.eval(s);
            !(sig * sig + self.jumps.second_moment(s) >= eps)
        }) {
            let sig = self.sigma.eval(s);
            v.push(Violation::Ellipticity { s, value: sig * sig + self.jumps.second_moment(s), eps });
        }
        ValidationReport { violations: v }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Horizon(f64),
    HorizonMismatch { name: String, horizon: f64 },
    NegativeIntensity { atom: usize, intensity: f64 },
    LimitedLiability { atom: usize, s: f64, value: f64 },
    RiskAversion(f64),
    InitialWealth(f64),
    EllipticityBound(f64),
    ExcessReturn { s: f64, value: f64 },
    Ellipticity { s: f64, value: f64, eps: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Horizon(t) => write!(f, "horizon must be positive and finite, got {t}"),
            Violation::HorizonMismatch { name, horizon } => {
                write!(f, "{name} is sampled over [0, {horizon}], not the market horizon")
            }
            Violation::NegativeIntensity { atom, intensity } => {
                write!(f, "jump atom {atom} has intensity {intensity} (must be >= 0)")
            }
            Violation::LimitedLiability { atom, s, value } => {
                write!(f, "limited liability: jump coefficient of atom {atom} is {value} < -1 at s = {s}")
            }
            Violation::RiskAversion(mu) => write!(f, "risk-aversion weight mu = {mu} must be >= 0"),
            Violation::InitialWealth(x) => write!(f, "initial wealth {x} is not finite"),
            Violation::EllipticityBound(e) => write!(f, "ellipticity bound {e} must be positive"),
            Violation::ExcessReturn { s, value } => {
                write!(f, "excess return r - r0 = {value} is not positive at s = {s}")
            }
            Violation::Ellipticity { s, value, eps } => write!(
                f,
                "ellipticity: sigma^2 + sum phi^2 nu = {value:e} < {eps:e} at s = {s}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_ellipticity_violation(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, Violation::Ellipticity { .. }))
    }

    pub fn has_limited_liability_violation(&self) -> bool {
        self.violations.iter().any(|v| matches!(v, Violation::LimitedLiability { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A validated market. All solvers take this type.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    spec: MarketSpec,
}

impl MarketParams {
    pub fn new(spec: MarketSpec) -> Result<Self> {
        let report = spec.validate();
        if report.is_valid() {
            Ok(Self { spec })
        } else {
            Err(Error::InvalidParams(report))
        }
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.spec
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn mu(&self) -> f64 {
        self.spec.mu
    }

    pub fn x0(&self) -> f64 {
        self.spec.x0
    }

    pub fn jumps(&self) -> &LevyAtomMeasure {
        &self.spec.jumps
    }

    /// Same market with a different risk-aversion weight.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(self.spec.clone().with_mu(mu))
    }

    pub(crate) fn check_time(&self, s: f64) -> Result<()> {
        let t = self.spec.horizon;
        if s >= -TIME_SLACK * t && s <= t * (1.0 + TIME_SLACK) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { s, horizon: t })
        }
    }

    pub fn r0(&self, s: f64) -> f64 {
        self.spec.r0.eval(s)
    }

    pub fn sigma(&self, s: f64) -> f64 {
        self.spec.sigma.eval(s)
    }

    /// `rho(s) = r(s) - r0(s)` without a range check.
    pub fn rho(&self, s: f64) -> f64 {
        self.spec.r.eval(s) - self.spec.r0.eval(s)
    }

    /// `sigma(s)^2 + sum_i phi(s, e_i)^2 nu_i`.
    pub fn total_variance_rate(&self, s: f64) -> f64 {
        let sig = self.spec.sigma.eval(s);
        sig * sig + self.spec.jumps.second_moment(s)
    }

    /// `(nu_i, phi(s, e_i))` for every atom.
    pub fn jump_coefficients(&self, s: f64) -> Vec<(f64, f64)> {
        self.spec.jumps.atoms.iter().map(|a| (a.intensity, a.coefficient.eval(s))).collect()
    }

    pub(crate) fn kappa_unchecked(&self, s: f64) -> f64 {
        self.rho(s) / self.total_variance_rate(s)
    }

    pub fn excess_return(&self, s: f64) -> Result<f64> {
        self.check_time(s)?;
        Ok(self.rho(s))
    }

    /// `kappa(s) = rho(s) / (sigma(s)^2 + sum_i phi(s, e_i)^2 nu_i)`.
    pub fn kappa(&self, s: f64) -> Result<f64> {
        self.check_time(s)?;
        Ok(self.kappa_unchecked(s))
    }
}

/// Linear feedback rule `u = alpha(s) * z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStrategy {
    pub alpha: CoefficientFn,
}

impl LinearStrategy {
    pub fn new(alpha: CoefficientFn) -> Self {
        Self { alpha }
    }

    pub fn zero(horizon: f64) -> Self {
        Self { alpha: CoefficientFn::constant(horizon, 0.0) }
    }

    pub fn constant(horizon: f64, alpha: f64) -> Self {
        Self { alpha: CoefficientFn::constant(horizon, alpha) }
    }

    pub fn coefficient(&self, s: f64) -> f64 {
        self.alpha.eval(s)
    }

    pub fn action(&self, s: f64, z: f64) -> f64 {
        self.alpha.eval(s) * z
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { alpha: self.alpha.map(|a| a * factor) }
    }

    pub fn horizon(&self) -> f64 {
        self.alpha.horizon()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn excess_return_of_constants() {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        assert!(approx(p.excess_return(0.5).unwrap(), 0.04, 1e-15));
        assert!(approx(p.excess_return(1.0).unwrap(), 0.04, 1e-15));
        assert!(matches!(p.excess_return(1.5), Err(Error::TimeOutOfRange { .. })));
        assert!(p.excess_return(-0.1).is_err());
    }

    #[test]
    fn zero_excess_return_is_rejected() {
        let spec = MarketSpec::constant(0.02, 0.02, 0.2, 1.0, 1.0, 1.0);
        match MarketParams::new(spec) {
            Err(Error::InvalidParams(r)) => {
                assert!(r.violations.iter().any(|v| matches!(v, Violation::ExcessReturn { .. })))
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn kappa_examples() {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        assert!(approx(p.kappa(0.3).unwrap(), 1.0, 1e-14));
        let p1 = MarketParams::new(MarketSpec::e1()).unwrap();
        assert!(approx(p1.kappa(0.3).unwrap(), 2.0 / 3.0, 1e-14));
        let tiny = MarketSpec::constant(0.02, 0.02 + 1e-12, 0.2, 1.0, 1.0, 1.0);
        let p2 = MarketParams::new(tiny).unwrap();
        assert!(p2.kappa(0.0).unwrap().abs() < 1e-9);
        assert!(p.kappa(2.0).is_err());
    }

    #[test]
    fn validation_reports() {
        assert!(MarketSpec::e0().validate().is_valid());
        let flat = MarketSpec::constant(0.02, 0.06, 0.0, 1.0, 1.0, 1.0);
        assert!(flat.validate().has_ellipticity_violation());
        let crash = MarketSpec::e0().with_atom(1.0, 1.0, -1.5);
        assert!(crash.validate().has_limited_liability_violation());
        let neg = MarketSpec::e0().with_atom(1.0, -1.0, 0.1);
        assert!(!neg.validate().is_valid());
    }

    #[test]
    fn jumps_alone_satisfy_ellipticity() {
        let spec = MarketSpec::constant(0.02, 0.06, 0.0, 1.0, 1.0, 1.0).with_atom(1.0, 1.0, 0.3);
        assert!(spec.validate().is_valid());
    }
}
