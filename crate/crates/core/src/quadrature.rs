//! Composite Simpson rules on uniform grids.

/// Composite Simpson rule for `int_a^b f` with `panels` panels (two
/// sub-intervals each).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Tail integrals `I_k = int_{s_k}^{s_n} f` for samples on a uniform grid of
/// `2m + 1` nodes with spacing `h`.
///
/// Even nodes use composite Simpson from the right end; odd nodes add the
/// three-point partial rule `h/12 (-f0 + 8 f1 + 5 f2)` to the next even
/// node, so every entry is fourth-order accurate.
pub fn tail_integrals(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "tail_integrals needs an odd number (>= 3) of samples");
    let mut out = vec![0.0; n];
    let mut j = n - 1;
    while j >= 2 {
        let (f0, f1, f2) = (values[j - 2], values[j - 1], values[j]);
        out[j - 1] = out[j] + h / 12.0 * (-f0 + 8.0 * f1 + 5.0 * f2);
        out[j - 2] = out[j] + h / 3.0 * (f0 + 4.0 * f1 + f2);
        j -= 2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tail_integrals_exact_on_quadratics() {
        let h = 0.1;
        let xs: Vec<f64> = (0..11).map(|k| k as f64 * h).collect();
        let f: Vec<f64> = xs.iter().map(|x| 3.0 * x * x + 1.0).collect();
        let tails = tail_integrals(&f, h);
        for (x, t) in xs.iter().zip(&tails) {
            let exact = (1.0 + 1.0) - (x * x * x + x);
            assert!((t - exact).abs() < 1e-13, "{x}: {t} vs {exact}");
        }
    }

    #[test]
    fn tail_integrals_fourth_order() {
        let err = |m: usize| {
            let h = 1.0 / (2 * m) as f64;
            let f: Vec<f64> = (0..=2 * m).map(|k| (3.0 * k as f64 * h).exp()).collect();
            let tails = tail_integrals(&f, h);
            (0..=2 * m)
                .map(|k| {
                    let x = k as f64 * h;
                    ((3.0f64).exp() - (3.0 * x).exp()) / 3.0 - tails[k]
                })
                .fold(0.0f64, |a, e| a.max(e.abs()))
        };
        let ratio = err(8) / err(16);
        assert!(ratio > 12.0, "ratio {ratio}");
    }
}
