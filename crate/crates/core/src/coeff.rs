use crate::error::{Error, Result};

/// A real function of time sampled on a uniform grid over `[0, horizon]`.
///
/// Evaluation interpolates linearly between samples and clamps outside the
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFn {
    horizon: f64,
    values: Vec<f64>,
}

impl CoefficientFn {
    pub fn constant(horizon: f64, value: f64) -> Self {
        Self { horizon, values: vec![value, value] }
    }

    pub fn from_samples(horizon: f64, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidCoefficient(format!("horizon must be positive, got {horizon}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidCoefficient(format!(
                "need at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCoefficient(format!("sample {i} is not finite")));
        }
        Ok(Self { horizon, values })
    }

    /// Samples `f` at `intervals + 1` uniform nodes.
    pub fn from_fn(horizon: f64, intervals: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = intervals.max(1);
        let h = horizon / n as f64;
        let values = (0..=n).map(|k| f(k as f64 * h)).collect();
        Self { horizon, values }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        self.horizon / (self.values.len() - 1) as f64
    }

    /// Sample times, in increasing order.
    pub fn knots(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.step();
        (0..self.values.len()).map(move |k| k as f64 * h)
    }

    pub fn eval(&self, s: f64) -> f64 {
        let n = self.values.len() - 1;
        let pos = s / self.step();
        if !(pos > 0.0) {
            return self.values[0];
        }
        if pos >= n as f64 {
            return self.values[n];
        }
        let k = (pos.floor() as usize).min(n - 1);
        let w = pos - k as f64;
        if w == 0.0 {
            return self.values[k];
        }
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { horizon: self.horizon, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_clamps() {
        let f = CoefficientFn::from_samples(2.0, vec![0.0, 1.0, 4.0]).unwrap();
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(1.5), 2.5);
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval(3.0), 4.0);
        assert_eq!(f.eval(2.0), 4.0);
    }

    #[test]
    fn rejects_short_grids() {
        assert!(CoefficientFn::from_samples(1.0, vec![1.0]).is_err());
        assert!(CoefficientFn::from_samples(0.0, vec![1.0, 1.0]).is_err());
        assert!(CoefficientFn::from_samples(1.0, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn from_fn_hits_endpoints() {
        let f = CoefficientFn::from_fn(1.0, 4, |s| s * s);
        assert_eq!(f.samples().len(), 5);
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.eval(0.5), 0.25);
    }
}
