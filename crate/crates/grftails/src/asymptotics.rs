//! Threshold equation, tail constant and the closed-form tail approximations.
//!
//! For a standardized model on a domain of measure `mes(T)`, the exceedance
//! probability of the exponential integral `I_sigma(T) = int_T exp(sigma f)`
//! above a large threshold `b` is approximated by
//!
//! ```text
//!     P(I_sigma(T) > b) ~ H * mes(T) * u^(d-1) * exp(-u^2 / 2),
//! ```
//!
//! where `u` solves `(2 pi / sigma)^(d/2) u^(-d/2) exp(sigma u) = b` and `H`
//! collects the second- and fourth-order spectral-moment corrections. The
//! same formula with `mes(T)` replaced by the panel measure `(2 eps)^d`,
//! `eps = kappa u^(delta - 1/2)`, gives the panel-local probability.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GrfError, Result};
use crate::kernel::{spectral_moments, standardize, CovarianceModel, SpectralMoments};
use crate::math::{adaptive_simpson, log_sum_exp, phi_bar, GaussHermite};
use crate::rng::{labels, Streams};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Residual target for the threshold solver, relative to log b.
const SOLVER_TOL: f64 = 1e-12;

/// Log-volume of the Gaussian bump profile,
/// `H0 = ln int exp(-sigma t^T t / 2) dt = (d/2) ln(2 pi / sigma)`.
///
/// The threshold equation in its alternative form reads
/// `u^(-d/2) exp(sigma u + H0) = b`.
pub fn h_zero(sigma: f64, d: usize) -> f64 {
    d as f64 / 2.0 * (LN_2PI - sigma.ln())
}

/// Log of the left-hand side of the threshold equation at `u`:
/// `sigma u - (d/2) ln u + H0`.
pub fn log_forward_threshold(u: f64, sigma: f64, d: usize) -> f64 {
    sigma * u - d as f64 / 2.0 * u.ln() + h_zero(sigma, d)
}

/// Left-hand side of the threshold equation, `(2 pi/sigma)^(d/2) u^(-d/2) e^(sigma u)`.
///
/// Overflows to infinity for very large `u`; use [`log_forward_threshold`]
/// in that regime.
pub fn forward_threshold(u: f64, sigma: f64, d: usize) -> f64 {
    log_forward_threshold(u, sigma, d).exp()
}

/// Smallest `b` for which the threshold equation has a root in its monotone
/// region `u > d / (2 sigma)`; independent of `sigma`.
pub fn min_feasible_b(d: usize) -> f64 {
    if d == 0 {
        1.0
    } else {
        // value of the left-hand side at u = d/(2 sigma): (4 pi e / d)^(d/2)
        let d_f = d as f64;
        (4.0 * std::f64::consts::PI * std::f64::consts::E / d_f).powf(d_f / 2.0)
    }
}

fn validate_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(GrfError::InvalidParameter(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

/// Solves the threshold equation for `u`.
///
/// Works in log space on the residual `g(u) = sigma u - (d/2) ln u +
/// (d/2) ln(2 pi/sigma) - ln b`, so thresholds up to 1e300 and beyond the
/// exp-overflow range are fine. Safeguarded Newton: the iterate is clamped to a bracket
/// `[d/(2 sigma) + eps, ln b / sigma + d ln ln b + 10]` on which `g` is
/// strictly increasing.
pub fn solve_u(b: f64, sigma: f64, d: usize) -> Result<f64> {
    validate_sigma(sigma)?;
    if !(b > 0.0) || !b.is_finite() {
        return Err(GrfError::InvalidParameter(format!(
            "threshold b must be positive and finite, got {b}"
        )));
    }
    let b_min = min_feasible_b(d);
    if b <= b_min {
        return Err(GrfError::InfeasibleThreshold { b, b_min });
    }
    let ln_b = b.ln();
    let g = |u: f64| log_forward_threshold(u, sigma, d) - ln_b;
    let dg = |u: f64| sigma - d as f64 / (2.0 * u);

    let mut lo = d as f64 / (2.0 * sigma) + 1e-12;
    let mut hi = ln_b.max(1.0) / sigma + d as f64 * ln_b.max(2.0).ln() + 10.0;
    debug_assert!(g(lo) < 0.0 && g(hi) > 0.0);

    let mut u = (ln_b / sigma).max(lo * 1.5).min(hi);
    let tol = SOLVER_TOL * ln_b.abs().max(1.0);
    for _ in 0..200 {
        let gu = g(u);
        if gu.abs() <= tol {
            return Ok(u);
        }
        if gu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let step = gu / dg(u);
        let mut next = u - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        u = next;
    }
    Err(GrfError::InvalidParameter(format!(
        "threshold solver did not converge for b = {b:.3e}, sigma = {sigma}, d = {d}"
    )))
}

/// Closed-form approximation of the threshold root:
/// `u ~ L/sigma + (d/(2 sigma)) ln(L/sigma) + (d/2)^2 ln(L/sigma)/(sigma L)`
/// with `L = ln(b (2 pi/sigma)^(-d/2))`.
///
/// Requires the reduced threshold to exceed `e` so the iterated logarithm is
/// positive.
pub fn u_closed_form(b: f64, sigma: f64, d: usize) -> Result<f64> {
    validate_sigma(sigma)?;
    if !(b > 0.0) || !b.is_finite() {
        return Err(GrfError::InvalidParameter(format!(
            "threshold b must be positive and finite, got {b}"
        )));
    }
    let dh = d as f64 / 2.0;
    let ln_b_tilde = b.ln() - dh * (LN_2PI - sigma.ln());
    if ln_b_tilde <= 1.0 {
        return Err(GrfError::InfeasibleThreshold {
            b,
            b_min: (1.0 + dh * (LN_2PI - sigma.ln())).exp(),
        });
    }
    let lead = ln_b_tilde / sigma;
    Ok(lead + (dh / sigma) * lead.ln() + dh * dh * lead.ln() / (sigma * ln_b_tilde))
}

/// Ingredients of the reduced one-dimensional form of the tail-constant
/// integral; shared by the closed-form, quadrature and MC evaluation paths.
struct HIntegralParts {
    /// `mu22^(-1/2) mu02` as a vector, so the coupling term is `a . B`.
    a: nalgebra::DVector<f64>,
    /// `mu20 . one / (2 sigma)`.
    c: f64,
    /// Schur complement `1 - mu20 mu22^-1 mu02`.
    s2: f64,
}

fn h_integral_parts(moments: &SpectralMoments, sigma: f64) -> Result<HIntegralParts> {
    let s2 = moments.schur_complement()?;
    if s2 <= 0.0 {
        return Err(GrfError::InvalidMoments(
            "1 - mu20 mu22^-1 mu02 must be positive".into(),
        ));
    }
    let eig = moments.mu22.clone().symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(GrfError::InvalidMoments(
            "mu22 is not positive definite".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(-0.5)));
    let m22_inv_half = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let a = m22_inv_half * &moments.mu20;
    let c = moments.mu20.dot(&moments.one_vector) / (2.0 * sigma);
    Ok(HIntegralParts { a, c, s2 })
}

/// The Gaussian integral over `B in R^(d(d+1)/2)` of
/// `exp(-1/2 [B'B + (a.B + c)^2 / s2])`, in closed form.
///
/// Completing the square: with `M = I + a a'/s2`, the integral equals
/// `(2 pi)^(q/2) det(M)^(-1/2) exp(-c^2/(2 (s2 + a'a)))`. Sherman-Morrison
/// gives `det(M) = 1 + a'a/s2 = (s2 + a'a)/s2`, and since `a'a = mu20
/// mu22^-1 mu02` we have `s2 + a'a = 1` exactly, leaving
/// `(2 pi)^(q/2) sqrt(s2) exp(-c^2/2)`.
pub fn h_integral_closed_form(moments: &SpectralMoments, sigma: f64) -> Result<f64> {
    validate_sigma(sigma)?;
    let parts = h_integral_parts(moments, sigma)?;
    let q = moments.mu20.len();
    Ok((2.0 * std::f64::consts::PI).powf(q as f64 / 2.0)
        * parts.s2.sqrt()
        * (-0.5 * parts.c * parts.c).exp())
}

/// Same integral by numeric quadrature: adaptive Simpson for one B
/// component, tensor Gauss-Hermite otherwise. Cross-check path for
/// [`h_integral_closed_form`].
pub fn h_integral_quadrature(moments: &SpectralMoments, sigma: f64, nodes: usize) -> Result<f64> {
    validate_sigma(sigma)?;
    let parts = h_integral_parts(moments, sigma)?;
    let q = moments.mu20.len();
    let integrand = |b: &[f64]| -> f64 {
        let dot: f64 = parts.a.iter().zip(b).map(|(ai, bi)| ai * bi).sum();
        let norm2: f64 = b.iter().map(|x| x * x).sum();
        let t = dot + parts.c;
        (-0.5 * (norm2 + t * t / parts.s2)).exp()
    };
    if q == 1 {
        return Ok(adaptive_simpson(
            &|b: f64| integrand(&[b]),
            -40.0,
            40.0,
            1e-12,
        ));
    }
    // substitute B = sqrt(2) X so the Gauss-Hermite weight exp(-X'X) applies
    let gh = GaussHermite::new(nodes);
    let mut idx = vec![0usize; q];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        let mut x = vec![0.0; q];
        let mut x2 = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            w *= gh.weights[i];
            x[k] = std::f64::consts::SQRT_2 * gh.nodes[i];
            x2 += gh.nodes[i] * gh.nodes[i];
        }
        total += w * integrand(&x) * x2.exp();
        // odometer over the q-fold tensor grid
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < gh.nodes.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == q {
                return Ok(2f64.powf(q as f64 / 2.0) * total);
            }
        }
    }
}

/// Plain Monte Carlo evaluation of the same integral with `n` standard
/// normal draws; returns the estimate and its standard error.
pub fn h_integral_mc(
    moments: &SpectralMoments,
    sigma: f64,
    n: u64,
    streams: &Streams,
) -> Result<(f64, f64)> {
    validate_sigma(sigma)?;
    let parts = h_integral_parts(moments, sigma)?;
    let q = moments.mu20.len();
    // with B ~ N(0, I) the integrand becomes (2 pi)^(q/2) E exp(-(a.B+c)^2/(2 s2))
    let stats = streams.run_chunks(labels::H_INTEGRAL, n, |stream, take| {
        let mut rng = stream.rng();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..take {
            let mut dot = parts.c;
            for ai in parts.a.iter() {
                let z: f64 = rng.sample(StandardNormal);
                dot += ai * z;
            }
            let v = (-0.5 * dot * dot / parts.s2).exp();
            sum += v;
            sum2 += v * v;
        }
        (sum, sum2)
    });
    let (sum, sum2) = stats
        .into_iter()
        .fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0);
    let scale = (2.0 * std::f64::consts::PI).powf(q as f64 / 2.0);
    Ok((scale * mean, scale * (var / nf).sqrt()))
}

/// The tail constant `H` for a standardized model:
/// prefactor `|Gamma|^(-1/2) det(mu22)^(1/2) exp[(1' mu22 1 + sum_i
/// d4C/dt_i^4(0)) / (8 sigma^2)] / (2 pi)^((d+1)(d+2)/4)` times the Gaussian
/// `B`-integral, evaluated through its closed form.
pub fn constant_h(moments: &SpectralMoments, sigma: f64, d: usize) -> Result<f64> {
    if d != moments.dim {
        return Err(GrfError::DimensionMismatch {
            expected: moments.dim,
            actual: d,
        });
    }
    Ok(h_prefactor(moments, sigma)? * h_integral_closed_form(moments, sigma)?)
}

/// The analytic prefactor multiplying the `B`-integral in the tail constant.
pub fn h_prefactor(moments: &SpectralMoments, sigma: f64) -> Result<f64> {
    validate_sigma(sigma)?;
    let d = moments.dim as f64;
    let gamma_det = moments.gamma_det()?;
    if gamma_det <= 0.0 {
        return Err(GrfError::InvalidMoments(
            "Gamma has non-positive determinant".into(),
        ));
    }
    let mu22_det = nalgebra::Cholesky::new(moments.mu22.clone())
        .ok_or_else(|| GrfError::InvalidMoments("mu22 is not positive definite".into()))?
        .determinant();
    let one = &moments.one_vector;
    let quad_form = (one.transpose() * &moments.mu22 * one)[(0, 0)];
    let quartic_sum: f64 = moments.quartic_diag.iter().sum();
    let expo = (quad_form + quartic_sum) / (8.0 * sigma * sigma);
    Ok(gamma_det.powf(-0.5) * mu22_det.sqrt() * expo.exp()
        / (2.0 * std::f64::consts::PI).powf((d + 1.0) * (d + 2.0) / 4.0))
}

/// Full tail approximation for a standardized model.
#[derive(Debug, Clone)]
pub struct TailApproximation {
    pub b: f64,
    pub sigma: f64,
    pub dim: usize,
    /// Root of the threshold equation.
    pub u: f64,
    /// Closed-form threshold, when the iterated logarithm is defined.
    pub u_tilde: Option<f64>,
    /// Tail constant.
    pub h: f64,
    /// Lebesgue measure of the domain in standardized coordinates.
    pub domain_measure: f64,
    /// `H * mes(T) * u^(d-1) * exp(-u^2/2)`, clamped to 1.
    pub probability: f64,
    /// Unclamped value of the formula.
    pub raw_probability: f64,
    pub warnings: Vec<String>,
}

/// Evaluates the tail approximation.
///
/// `domain_measure` is the measure of the domain in the standardized
/// coordinates (for a raw model, use [`tail_approx_raw`], which applies the
/// affine transform to both the measure and the threshold). Probabilities
/// above 0.1 are outside the asymptotic regime and flagged rather than
/// rejected; values above 1 are clamped with a warning.
pub fn tail_approx(
    model: &CovarianceModel,
    domain_measure: f64,
    sigma: f64,
    b: f64,
) -> Result<TailApproximation> {
    if !(domain_measure > 0.0) {
        return Err(GrfError::InvalidParameter(format!(
            "domain measure must be positive, got {domain_measure}"
        )));
    }
    let moments = spectral_moments(model)?;
    let d = model.dim();
    let u = solve_u(b, sigma, d)?;
    let u_tilde = u_closed_form(b, sigma, d).ok();
    let h = constant_h(&moments, sigma, d)?;
    let log_p = h.ln() + domain_measure.ln() + (d as f64 - 1.0) * u.ln() - 0.5 * u * u;
    let raw = log_p.exp();
    let mut warnings = Vec::new();
    let probability = if raw > 1.0 {
        warnings.push(format!(
            "approximation {raw:.3e} exceeds 1; clamped (far outside the asymptotic regime)"
        ));
        1.0
    } else {
        if raw > 0.1 {
            warnings.push(format!(
                "approximate probability {raw:.3e} exceeds 0.1; the asymptotic formula may be unreliable here"
            ));
        }
        raw
    };
    Ok(TailApproximation {
        b,
        sigma,
        dim: d,
        u,
        u_tilde,
        h,
        domain_measure,
        probability,
        raw_probability: raw,
        warnings,
    })
}

/// Tail approximation for a raw (non-standardized) model.
///
/// Standardizes the model and maps the problem through the affine identity:
/// with `mf = det(Sigma)^(-1/2)`, the raw problem `(mes, b)` is equivalent to
/// the standardized problem `(mes / mf, b / mf)`.
pub fn tail_approx_raw(
    model: &CovarianceModel,
    raw_domain_measure: f64,
    sigma: f64,
    b: f64,
) -> Result<(TailApproximation, crate::kernel::AffineStandardization)> {
    let (std_model, tf) = standardize(model)?;
    let approx = tail_approx(
        &std_model,
        raw_domain_measure / tf.measure_factor,
        sigma,
        b / tf.measure_factor,
    )?;
    Ok((approx, tf))
}

/// Panel-local tail approximation over `Xi_eps = {t : |t|_inf < eps}` with
/// `eps = kappa u^(delta - 1/2)`; returns `H (2 eps)^d u^(d-1) exp(-u^2/2)`.
pub fn panel_tail_approx(
    kappa: f64,
    delta: f64,
    model: &CovarianceModel,
    sigma: f64,
    b: f64,
) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(GrfError::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(GrfError::InvalidParameter(format!(
            "delta must lie in (0, 1/2), got {delta}"
        )));
    }
    let d = model.dim();
    let u = solve_u(b, sigma, d)?;
    let eps = kappa * u.powf(delta - 0.5);
    let moments = spectral_moments(model)?;
    let h = constant_h(&moments, sigma, d)?;
    let log_p =
        h.ln() + (d as f64) * (2.0 * eps).ln() + (d as f64 - 1.0) * u.ln() - 0.5 * u * u;
    Ok(log_p.exp())
}

/// Shape of the supremum-exceedance rate, `u^d * PhiBar(u)`; the unknown
/// multiplicative constant is left to empirical fitting.
pub fn sup_rate_shape(u: f64, d: usize) -> f64 {
    u.powi(d as i32) * phi_bar(u)
}

/// Concentration bound for the centered supremum of a bounded Gaussian
/// field: `P(sup f - E sup f >= x) <= exp(-x^2 / (2 sigma_max^2))`.
pub fn borel_tis_bound(sigma_sq_max: f64, x: f64) -> Result<f64> {
    if !(sigma_sq_max > 0.0) {
        return Err(GrfError::InvalidParameter(format!(
            "sigma_sq_max must be positive, got {sigma_sq_max}"
        )));
    }
    if x < 0.0 {
        return Err(GrfError::InvalidParameter(format!(
            "x must be non-negative, got {x}"
        )));
    }
    Ok((-x * x / (2.0 * sigma_sq_max)).exp())
}

/// Defect of the second-order log-determinant expansion: for symmetric `Z`
/// with eigenvalues `l_i`, `|l_i| < u`,
///
/// ```text
///     | log det(I - Z/u) + Tr(Z)/u + (1/2) sum_i l_i^2 / u^2 |,
/// ```
///
/// which is `O(u^-3)` since `log(1 - x) = -x - x^2/2 - x^3/3 - ...`.
pub fn log_det_expansion_error(z: &DMatrix<f64>, u: f64) -> Result<f64> {
    if z.nrows() != z.ncols() {
        return Err(GrfError::InvalidParameter("Z must be square".into()));
    }
    if (z - z.transpose()).amax() > 1e-12 * z.amax().max(1.0) {
        return Err(GrfError::InvalidParameter("Z must be symmetric".into()));
    }
    let eig = z.clone().symmetric_eigen();
    let mut log_det = 0.0;
    let mut trace = 0.0;
    let mut sq_sum = 0.0;
    for &lam in eig.eigenvalues.iter() {
        if lam.abs() >= u {
            return Err(GrfError::InvalidParameter(format!(
                "eigenvalue {lam:.3e} has modulus >= u = {u}"
            )));
        }
        log_det += (-lam / u).ln_1p();
        trace += lam;
        sq_sum += lam * lam;
    }
    Ok((log_det + trace / u + 0.5 * sq_sum / (u * u)).abs())
}

/// Inverts the monotone map `b -> probability` of [`tail_approx`]: returns
/// the threshold whose approximate exceedance probability is `target_prob`.
pub fn threshold_for_probability(
    model: &CovarianceModel,
    domain_measure: f64,
    sigma: f64,
    target_prob: f64,
) -> Result<f64> {
    if !(target_prob > 0.0 && target_prob < 1.0) {
        return Err(GrfError::InvalidParameter(format!(
            "target probability must lie in (0, 1), got {target_prob}"
        )));
    }
    if !(domain_measure > 0.0) {
        return Err(GrfError::InvalidParameter(format!(
            "domain measure must be positive, got {domain_measure}"
        )));
    }
    let d = model.dim();
    let moments = spectral_moments(model)?;
    let h = constant_h(&moments, sigma, d)?;
    let base = h.ln() + domain_measure.ln();
    let target = target_prob.ln();
    // log probability as a function of u, strictly decreasing past the mode
    let log_p = |u: f64| base + (d as f64 - 1.0) * u.ln() - 0.5 * u * u;
    let mut lo = (d as f64 / (2.0 * sigma) + 1e-6).max(((d as f64 - 1.0).max(0.0)).sqrt() + 0.1);
    if log_p(lo) < target {
        return Err(GrfError::InvalidParameter(format!(
            "target probability {target_prob:.3e} is too large for this scenario"
        )));
    }
    let mut hi = lo + 1.0;
    while log_p(hi) > target {
        hi += 1.0;
        if hi > 1e6 {
            return Err(GrfError::InvalidParameter(
                "target probability is unreachably small".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_p(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    let log_b = log_forward_threshold(u, sigma, d);
    if log_b > 700.0 {
        return Err(GrfError::InvalidParameter(
            "implied threshold overflows f64; lower the target probability".into(),
        ));
    }
    Ok(log_b.exp())
}

/// Log-space helper used by the Monte Carlo drivers: `ln` of the mixture
/// likelihood-ratio denominator `(1/n) sum_j exp(level * f_j - level^2/2)`.
pub(crate) fn log_mixture_tilt(values: &[f64], level: f64) -> f64 {
    let n = values.len() as f64;
    log_sum_exp(
        values
            .iter()
            .map(|&f| level * f - 0.5 * level * level - n.ln()),
    )
}
