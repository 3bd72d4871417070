//! Quadrature backends: composite Gauss–Legendre panels and adaptive
//! Simpson. The two are kept independent so that integral values can be
//! cross-checked between genuinely different discretizations.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on
/// the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -t;
        nodes[n - 1 - i] = t;
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CACHE.get_or_init(|| gauss_legendre(16))
}

/// Composite 16-point Gauss–Legendre over equal panels.
pub fn integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gl16();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + h / 2.0;
        let half = h / 2.0;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            acc += w * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

/// Adaptive Simpson with absolute tolerance.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
    }
    fn go(
        f: impl Fn(f64) -> f64 + Copy,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = (a + b) / 2.0;
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth > 48 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        go(f, a, m, left, tol / 2.0, depth + 1) + go(f, m, b, right, tol / 2.0, depth + 1)
    }
    let whole = simpson(f, a, b);
    go(f, a, b, whole, tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_backends_integrate_polynomials() {
        let f = |x: f64| 3.0 * x * x + x;
        let exact = 1.0 + 0.5;
        assert!((integrate_panels(f, 0.0, 1.0, 4) - exact).abs() < 1e-14);
        assert!((integrate_adaptive(f, 0.0, 1.0, 1e-12) - exact).abs() < 1e-10);
    }

    #[test]
    fn oscillatory_integral() {
        let f = |x: f64| (10.0 * x).sin();
        let exact = (1.0 - (10.0f64).cos()) / 10.0;
        assert!((integrate_panels(f, 0.0, 1.0, 8) - exact).abs() < 1e-12);
        assert!((integrate_adaptive(f, 0.0, 1.0, 1e-12) - exact).abs() < 1e-9);
    }

    #[test]
    fn legendre_nodes_are_symmetric() {
        let (x, w) = gauss_legendre(20);
        for i in 0..20 {
            assert!((x[i] + x[19 - i]).abs() < 1e-14);
            assert!((w[i] - w[19 - i]).abs() < 1e-14);
        }
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }
}
