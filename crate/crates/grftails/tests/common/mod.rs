#![allow(dead_code)] // each test binary uses a subset of the oracles

//! Independent oracles for the validation suites: finite differences with
//! Richardson extrapolation, and deterministic Gaussian quadrature for
//! exceedance probabilities of small exponential sums. Nothing here calls
//! the analytic code paths it is used to check.

use nalgebra::{DMatrix, DVector};

/// Standard normal upper tail; local copy so the oracles do not share code
/// with the library paths under test.
pub fn phi_bar_ref(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn stencil(order: usize) -> (Vec<i64>, Vec<f64>) {
    // second-order central stencils; accuracy comes from Richardson
    match order {
        0 => (vec![0], vec![1.0]),
        1 => (vec![-1, 1], vec![-0.5, 0.5]),
        2 => (vec![-1, 0, 1], vec![1.0, -2.0, 1.0]),
        3 => (vec![-2, -1, 1, 2], vec![-0.5, 1.0, -1.0, 0.5]),
        4 => (vec![-2, -1, 0, 1, 2], vec![1.0, -4.0, 6.0, -4.0, 1.0]),
        _ => panic!("stencil order {order} not supported"),
    }
}

fn mixed_partial_once<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    center: &DVector<f64>,
    orders: &[usize],
    h: f64,
) -> f64 {
    let d = orders.len();
    let per_axis: Vec<(Vec<i64>, Vec<f64>)> = orders.iter().map(|&o| stencil(o)).collect();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let mut point = center.clone();
        let mut coeff = 1.0;
        for a in 0..d {
            let (offs, wts) = &per_axis[a];
            point[a] += offs[idx[a]] as f64 * h;
            coeff *= wts[idx[a]];
        }
        total += coeff * f(&point);
        let mut a = 0;
        loop {
            idx[a] += 1;
            if idx[a] < per_axis[a].0.len() {
                break;
            }
            idx[a] = 0;
            a += 1;
            if a == d {
                let scale: f64 = orders.iter().map(|&o| h.powi(o as i32)).product();
                return total / scale;
            }
        }
    }
}

/// Mixed partial derivative of `f` at `center` with the given per-axis
/// orders (sum at most 4), by central differences at steps `h, h/2, h/4`
/// and two Richardson levels, giving sixth-order accuracy.
pub fn mixed_partial<F: Fn(&DVector<f64>) -> f64>(
    f: &F,
    center: &DVector<f64>,
    orders: &[usize],
    h: f64,
) -> f64 {
    let d0 = mixed_partial_once(f, center, orders, h);
    let d1 = mixed_partial_once(f, center, orders, h / 2.0);
    let d2 = mixed_partial_once(f, center, orders, h / 4.0);
    let r0 = (4.0 * d1 - d0) / 3.0;
    let r1 = (4.0 * d2 - d1) / 3.0;
    (16.0 * r1 - r0) / 15.0
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
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
        simpson_rec(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature, independent of the library's copy.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_rec(f, a, b, fa, fb, fc, whole, tol, 50)
}

/// Deterministic quadrature for `P(sum_i w_i exp(sigma X_i) > b)` with
/// `X ~ N(mu, cov)` and `n <= 3` components.
///
/// Factorizes `X = mu + L V` with `L` lower triangular and `V` standard
/// normal; the last coordinate is monotone in its own Gaussian, so its tail
/// is closed-form and only the remaining `n - 1` coordinates are integrated
/// numerically.
pub fn exp_sum_exceedance_oracle(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    weights: &[f64],
    sigma: f64,
    b: f64,
) -> f64 {
    let n = mu.len();
    assert!((1..=3).contains(&n));
    assert_eq!(weights.len(), n);
    assert!(weights.iter().all(|&w| w > 0.0));
    if b <= 0.0 {
        return 1.0;
    }
    let l = nalgebra::Cholesky::new(cov.clone()).expect("oracle needs PD covariance").unpack();
    // the integration window must reach past the level each leading
    // coordinate needs on its own, or deep-tail mass is truncated
    let min_sd = (0..n).map(|i| cov[(i, i)].sqrt()).fold(f64::INFINITY, f64::min);
    let lim = 8.5f64.max(b.ln().abs() / (sigma * min_sd) + 6.0);

    // closed-form tail of the last coordinate given the leading ones;
    // explicit per-size handling keeps the indexing honest
    let last_tail = |lead: &[f64]| -> f64 {
        let mut remaining = b;
        let mut shift = mu[n - 1];
        match n {
            1 => {}
            2 => {
                let x1 = mu[0] + l[(0, 0)] * lead[0];
                remaining -= weights[0] * (sigma * x1).exp();
                shift += l[(1, 0)] * lead[0];
            }
            3 => {
                let x1 = mu[0] + l[(0, 0)] * lead[0];
                let x2 = mu[1] + l[(1, 0)] * lead[0] + l[(1, 1)] * lead[1];
                remaining -= weights[0] * (sigma * x1).exp() + weights[1] * (sigma * x2).exp();
                shift += l[(2, 0)] * lead[0] + l[(2, 1)] * lead[1];
            }
            _ => unreachable!(),
        }
        if remaining <= 0.0 {
            return 1.0;
        }
        let threshold = (remaining / weights[n - 1]).ln() / sigma;
        phi_bar_ref((threshold - shift) / l[(n - 1, n - 1)])
    };

    let phi = |v: f64| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    // tolerances track the magnitude of the answer (roughly the sum of the
    // marginal tails), or deep-tail cases lose all relative accuracy
    let scale: f64 = (0..n)
        .map(|i| phi_bar_ref((b.ln() / sigma - mu[i]) / cov[(i, i)].sqrt()))
        .sum::<f64>()
        .max(1e-280);
    match n {
        1 => last_tail(&[]),
        2 => integrate(&|v1: f64| phi(v1) * last_tail(&[v1]), -lim, lim, 1e-9 * scale),
        3 => integrate(
            &|v1: f64| {
                phi(v1)
                    * integrate(
                        &|v2: f64| phi(v2) * last_tail(&[v1, v2]),
                        -lim,
                        lim,
                        3e-10 * scale,
                    )
            },
            -lim,
            lim,
            1e-9 * scale,
        ),
        _ => unreachable!(),
    }
}

/// Bisection for the threshold with a given oracle probability.
pub fn threshold_for_oracle_prob<F: Fn(f64) -> f64>(prob_of_b: F, target: f64) -> f64 {
    let mut lo = 1e-6;
    let mut hi = 1.0;
    while prob_of_b(hi) > target {
        hi *= 2.0;
        assert!(hi < 1e12, "oracle bisection ran away");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if prob_of_b(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
