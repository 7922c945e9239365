//! Small quadrature toolkit: Gauss-Legendre nodes and adaptive Simpson.

use crate::error::{Error, Result};

/// Nodes and weights of n-point Gauss-Legendre quadrature on [-1, 1],
/// by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Adaptive Simpson on [a, b] targeting the given relative tolerance.
/// Returns the estimate and a crude error bound.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)> {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        eps: f64,
        depth: usize,
        err_acc: &mut f64,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            *err_acc += delta.abs() / 15.0;
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, eps / 2.0, depth - 1, err_acc)
            + recurse(f, m, fm, b, fb, right, rm, frm, eps / 2.0, depth - 1, err_acc)
    }

    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    // Scale the tolerance from a coarse scan so that sharply peaked
    // integrands do not drive the error target below machine precision.
    let scan_max = (0..=32)
        .map(|k| f(a + (b - a) * k as f64 / 32.0).abs())
        .fold(0.0f64, f64::max);
    let scale = whole
        .abs()
        .max(scan_max * (b - a) / 4.0)
        .max(1e-300);
    let eps = (rel_tol * scale).max(f64::EPSILON * scale);
    let mut err = 0.0;
    let value = recurse(f, a, fa, b, fb, whole, m, fm, eps, 24, &mut err);
    let bound = err.max(f64::EPSILON * value.abs());
    if bound > rel_tol.max(1e-14) * value.abs().max(1e-300) * 100.0 {
        return Err(Error::QuadratureFailed {
            estimate: value,
            bound,
        });
    }
    Ok((value, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // degree <= 15 exact: check x^6 over [-1,1] = 2/7.
        let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(6)).sum();
        assert_relative_eq!(got, 2.0 / 7.0, epsilon = 1e-13);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn gauss_legendre_gaussian_integral() {
        let (x, w) = gauss_legendre(60);
        let half = 8.0;
        let got: f64 = x
            .iter()
            .zip(&w)
            .map(|(xi, wi)| {
                let t = xi * half;
                wi * half * (-0.5 * t * t).exp()
            })
            .sum();
        assert_relative_eq!(got, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn adaptive_simpson_smooth() {
        let (v, _) = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-10).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-9);
    }
}
