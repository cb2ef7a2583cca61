//! Compressed sparse rows and a Jacobi-preconditioned BiCGSTAB solver.

use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Row-by-row builder. Duplicate columns within a row are summed.
#[derive(Debug)]
pub struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize, nnz_hint: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        Self {
            n,
            row_ptr,
            cols: Vec::with_capacity(nnz_hint),
            vals: Vec::with_capacity(nnz_hint),
            scratch: Vec::with_capacity(32),
        }
    }

    pub fn add(&mut self, col: usize, val: f64) {
        debug_assert!(col < self.n);
        self.scratch.push((col, val));
    }

    pub fn finish_row(&mut self) {
        self.scratch.sort_unstable_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in &self.scratch {
            if c == last {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = c;
            }
        }
        self.scratch.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> CsrMatrix {
        assert_eq!(self.row_ptr.len(), self.n + 1, "every row must be finished");
        CsrMatrix { n: self.n, row_ptr: self.row_ptr, cols: self.cols, vals: self.vals }
    }
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `y = A x`. Rows are independent, so the product is deterministic
    /// regardless of how rayon splits them.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().with_min_len(1024).enumerate().for_each(|(r, yr)| *yr = self.row_dot(r, x));
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
                self.cols[a..b].iter().position(|&c| c == r).map_or(0.0, |p| self.vals[a + p])
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `|b - A x| / |b|`
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const MAX_RESTARTS: usize = 8;

/// Solves `A x = b` starting from the contents of `x`.
///
/// The recurrence is restarted from the current iterate after a breakdown.
/// Returns `Err` with the final statistics when the relative residual does
/// not reach `tol` within `max_iter` total iterations.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolveStats> {
    let mut used = 0;
    let mut last = SolveStats { iterations: 0, residual: f64::INFINITY };
    for _ in 0..=MAX_RESTARTS {
        match bicgstab_once(a, b, x, tol, max_iter - used) {
            Ok(st) => return Ok(SolveStats { iterations: used + st.iterations, residual: st.residual }),
            Err(st) => {
                used += st.iterations;
                last = SolveStats { iterations: used, residual: st.residual };
                if used >= max_iter || !st.residual.is_finite() {
                    break;
                }
            }
        }
    }
    Err(last)
}

fn bicgstab_once(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolveStats> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return Ok(SolveStats { iterations: 0, residual: res });
    }
    let r_hat = r.clone();
    let (mut rho_prev, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zv = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho = dot(&r_hat, &r);
        if rho == 0.0 || !rho.is_finite() {
            return Err(SolveStats { iterations: it, residual: res });
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_diag[i] * p[i];
        }
        a.mul_vec(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(SolveStats { iterations: it, residual: res });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats { iterations: it, residual: norm(&s) / bnorm });
        }
        for i in 0..n {
            zv[i] = inv_diag[i] * s[i];
        }
        a.mul_vec(&zv, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        if omega == 0.0 || !omega.is_finite() {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Err(SolveStats { iterations: it, residual: norm(&s) / bnorm });
        }
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zv[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        if !res.is_finite() {
            return Err(SolveStats { iterations: it, residual: res });
        }
        rho_prev = rho;
    }
    Err(SolveStats { iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> CsrMatrix {
        let mut b = CsrBuilder::new(n, 3 * n);
        for i in 0..n {
            if i > 0 {
                b.add(i - 1, -1.0);
            }
            b.add(i, 2.5);
            b.add(i, 0.5);
            if i + 1 < n {
                b.add(i + 1, -1.2);
            }
            b.finish_row();
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let a = tridiag(4);
        assert_eq!(a.diagonal(), vec![3.0; 4]);
        assert_eq!(a.nnz(), 10);
    }

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 200;
        let a = tridiag(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&x_true, &mut b);
        let mut x = vec![0.0; n];
        let stats = bicgstab(&a, &b, &mut x, 1e-13, 500).unwrap();
        assert!(stats.residual <= 1e-13);
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = tridiag(5);
        let mut x = vec![1.0; 5];
        bicgstab(&a, &[0.0; 5], &mut x, 1e-13, 10).unwrap();
        assert_eq!(x, vec![0.0; 5]);
    }
}
