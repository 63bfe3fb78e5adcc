//! Small numerical helpers: normal tails, log-sum-exp, adaptive Simpson
//! quadrature and Gauss-Hermite rules.

use nalgebra::DMatrix;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal upper tail P(Z > x), accurate into the far tail.
pub fn phi_bar(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`phi_bar`] on (0, 1), by bisection.
///
/// Used to pick thresholds from a target marginal tail level; accuracy is
/// limited only by `phi_bar` itself.
pub fn phi_bar_inv(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "tail level must be in (0,1)");
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi_bar(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// log(sum exp(t_i)) with the usual max shift; empty input gives -inf.
pub fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1)
            + simpson_step(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
    }
}

/// Gauss-Hermite rule for integrals against exp(-x^2), computed by the
/// Golub-Welsch eigen decomposition of the Jacobi matrix.
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            // off-diagonal beta_i = sqrt(i/2)
            let b = (i as f64 / 2.0).sqrt();
            jac[(i - 1, i)] = b;
            jac[(i, i - 1)] = b;
        }
        let eig = jac.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_bar_reference_values() {
        assert!((phi_bar(0.0) - 0.5).abs() < 1e-15);
        // Phi_bar(1.959964) ~ 0.025
        assert!((phi_bar(1.959963984540054) - 0.025).abs() < 1e-12);
        // far tail stays positive and finite
        assert!(phi_bar(20.0) > 0.0 && phi_bar(20.0) < 1e-80);
    }

    #[test]
    fn phi_bar_inv_round_trip() {
        for &p in &[0.4, 1e-2, 1e-6, 1e-12] {
            let x = phi_bar_inv(p);
            assert!((phi_bar(x) - p).abs() / p < 1e-9, "p={p}");
        }
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let v = [0.1f64, -3.0, 2.5];
        let direct: f64 = v.iter().map(|t| t.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v) - direct).abs() < 1e-14);
        // huge inputs do not overflow
        let shifted = log_sum_exp([1000.0, 1000.0]);
        assert!((shifted - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let val = adaptive_simpson(&|x: f64| (-0.5 * x * x).exp(), -40.0, 40.0, 1e-12);
        assert!((val - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn gauss_hermite_moments() {
        let gh = GaussHermite::new(30);
        let total: f64 = gh.weights.iter().sum();
        assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        // second moment of exp(-x^2) is sqrt(pi)/2
        let m2: f64 = gh
            .nodes
            .iter()
            .zip(&gh.weights)
            .map(|(x, w)| w * x * x)
            .sum();
        assert!((m2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
    }
}
