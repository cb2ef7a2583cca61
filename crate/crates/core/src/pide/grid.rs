use crate::error::{Error, Result};

/// Uniform space-time grid. The `x` and `z` axes share the same nodes so
/// that the diagonal `x = z` is made of grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid2D {
    n: usize,
    lo: f64,
    hi: f64,
    nt: usize,
    horizon: f64,
}

impl StateGrid2D {
    /// `n_space` nodes per axis on `[lo, hi]`, `n_time` steps on `[0, horizon]`.
    pub fn new(n_space: usize, lo: f64, hi: f64, n_time: usize, horizon: f64) -> Result<Self> {
        if n_space < 3 {
            return Err(Error::Precondition(format!("need at least 3 nodes per axis, got {n_space}")));
        }
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Precondition(format!("space bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if n_time < 1 {
            return Err(Error::Precondition("need at least one time step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { n: n_space, lo, hi, nt: n_time, horizon })
    }

    /// Nodes per space axis.
    pub fn n_space(&self) -> usize {
        self.n
    }

    /// Number of time steps (one less than the number of time nodes).
    pub fn n_time(&self) -> usize {
        self.nt
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.h()
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.nt {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn z_nodes(&self) -> Vec<f64> {
        self.x_nodes()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        (0..=self.nt).map(|k| self.time(k)).collect()
    }

    /// Flat index of node `(i, j)` with `x` varying slowest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let slack = 1e-12 * (self.hi - self.lo);
        (self.lo - slack..=self.hi + slack).contains(&x) && (self.lo - slack..=self.hi + slack).contains(&z)
    }

    /// Node indices whose coordinate lies in the middle third of the axis.
    pub fn interior_third(&self) -> std::ops::RangeInclusive<usize> {
        let w = (self.hi - self.lo) / 3.0;
        let tol = 1e-9 * self.h();
        let first = (0..self.n).find(|&i| self.node(i) >= self.lo + w - tol).unwrap();
        let last = (0..self.n).rev().find(|&i| self.node(i) <= self.hi - w + tol).unwrap();
        first..=last
    }

    /// Continuous index position of coordinate `x`.
    pub(crate) fn position(&self, x: f64) -> f64 {
        (x - self.lo) / self.h()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_hit_bounds_exactly() {
        let g = StateGrid2D::new(81, -2.0, 2.0, 200, 1.0).unwrap();
        assert_eq!(g.node(0), -2.0);
        assert_eq!(g.node(80), 2.0);
        assert_eq!(g.node(40), 0.0);
        assert_eq!(g.time(200), 1.0);
        assert_eq!(g.x_nodes(), g.z_nodes());
    }

    #[test]
    fn interior_third_of_symmetric_grid() {
        let g = StateGrid2D::new(81, -2.0, 2.0, 10, 1.0).unwrap();
        let r = g.interior_third();
        assert!(g.node(*r.start()) >= -2.0 / 3.0 - 1e-12);
        assert!(g.node(*r.start() - 1) < -2.0 / 3.0);
        assert_eq!(r.start() + r.end(), 80);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(StateGrid2D::new(2, -1.0, 1.0, 10, 1.0).is_err());
        assert!(StateGrid2D::new(5, 1.0, 1.0, 10, 1.0).is_err());
        assert!(StateGrid2D::new(5, -1.0, 1.0, 0, 1.0).is_err());
    }
}
