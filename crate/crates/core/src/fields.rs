//! Common view of the value functions `theta(s, x, z)` and `g(s, x, z)`
//! associated with a linear strategy, whether they come from the quadratic
//! ansatz or from a grid solution.

use crate::coeff::CoefficientFn;

/// Values and partial derivatives of `theta` and `g` at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldDerivatives {
    pub theta: f64,
    pub theta_x: f64,
    pub theta_z: f64,
    pub theta_xx: f64,
    pub theta_xz: f64,
    pub theta_xxx: f64,
    pub theta_xxz: f64,
    pub g: f64,
    pub g_x: f64,
    pub g_z: f64,
    pub g_xx: f64,
    pub g_xz: f64,
    pub g_xxx: f64,
    pub g_xxz: f64,
}

pub trait ValueFields {
    fn horizon(&self) -> f64;

    /// Coefficient `alpha(s)` of the strategy the fields were computed for.
    fn strategy_coefficient(&self, s: f64) -> f64;

    /// Whether `(x, z)` lies in the region where the fields are defined
    /// without extrapolation.
    fn contains(&self, _x: f64, _z: f64) -> bool {
        true
    }

    fn theta(&self, s: f64, x: f64, z: f64) -> f64;

    fn g(&self, s: f64, x: f64, z: f64) -> f64;

    fn derivatives(&self, s: f64, x: f64, z: f64) -> FieldDerivatives;
}

/// `theta = M1 x^2/2 + M2 z^2/2 + M3 x z`, `g = N1 x + N2 z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzFields {
    pub n1: CoefficientFn,
    pub n2: CoefficientFn,
    pub m1: CoefficientFn,
    pub m2: CoefficientFn,
    pub m3: CoefficientFn,
    pub alpha: CoefficientFn,
}

impl ValueFields for AnsatzFields {
    fn horizon(&self) -> f64 {
        self.n1.horizon()
    }

    fn strategy_coefficient(&self, s: f64) -> f64 {
        self.alpha.eval(s)
    }

    fn theta(&self, s: f64, x: f64, z: f64) -> f64 {
        0.5 * self.m1.eval(s) * x * x + 0.5 * self.m2.eval(s) * z * z + self.m3.eval(s) * x * z
    }

    fn g(&self, s: f64, x: f64, z: f64) -> f64 {
        self.n1.eval(s) * x + self.n2.eval(s) * z
    }

    fn derivatives(&self, s: f64, x: f64, z: f64) -> FieldDerivatives {
        let (m1, m2, m3) = (self.m1.eval(s), self.m2.eval(s), self.m3.eval(s));
        let (n1, n2) = (self.n1.eval(s), self.n2.eval(s));
        FieldDerivatives {
            theta: 0.5 * m1 * x * x + 0.5 * m2 * z * z + m3 * x * z,
            theta_x: m1 * x + m3 * z,
            theta_z: m2 * z + m3 * x,
            theta_xx: m1,
            theta_xz: m3,
            g: n1 * x + n2 * z,
            g_x: n1,
            g_z: n2,
            ..FieldDerivatives::default()
        }
    }
}
