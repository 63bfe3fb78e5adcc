//! One-big-jump tail approximation for finite sums of correlated
//! log-normals, the discrete analogue of the field result: for
//! `X ~ N(mu, Sigma)` with nondegenerate `Sigma`,
//! `P(sum_i exp(X_i) > b)` is asymptotically `sum_i P(exp(X_i) > b)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GrfError, Result};
use crate::fieldsim::EstimateWithError;
use crate::math::{log_sum_exp, phi_bar};
use crate::rng::{labels, Streams};

/// A vector of jointly Gaussian log-values.
#[derive(Debug, Clone)]
pub struct LogNormalPortfolio {
    mu: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl LogNormalPortfolio {
    pub fn new(mu: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(GrfError::InvalidParameter(
                "portfolio must have at least one component".into(),
            ));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(GrfError::DimensionMismatch {
                expected: n,
                actual: cov.nrows(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(GrfError::InvalidParameter(
                "covariance must be symmetric".into(),
            ));
        }
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| {
                GrfError::InvalidParameter("covariance must be positive definite".into())
            })?
            .unpack();
        Ok(LogNormalPortfolio { mu, cov, chol })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Sum of marginal tails, `sum_i PhiBar((ln b - mu_i) / sqrt(Sigma_ii))`.
pub fn one_big_jump_approx(portfolio: &LogNormalPortfolio, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(GrfError::InvalidParameter(format!(
            "threshold b must be positive, got {b}"
        )));
    }
    let log_b = b.ln();
    Ok((0..portfolio.len())
        .map(|i| phi_bar((log_b - portfolio.mu[i]) / portfolio.cov[(i, i)].sqrt()))
        .sum())
}

/// Importance-sampling estimate of `P(sum_i exp(X_i) > b)`.
///
/// Mixture proposal: pick a component `i` uniformly and shift the mean by
/// `s_i Sigma e_i` with `s_i = (ln b - mu_i) / Sigma_ii`, which moves
/// component `i` onto the threshold and drags the others along their
/// conditional means. Each component is an exponential tilt, so the
/// likelihood ratio is
/// `[ (1/n) sum_i exp(s_i (X_i - mu_i) - s_i^2 Sigma_ii / 2) ]^(-1)`.
pub fn sum_tail_mc(
    portfolio: &LogNormalPortfolio,
    b: f64,
    n_samples: u64,
    streams: &Streams,
) -> Result<EstimateWithError> {
    if n_samples == 0 {
        return Err(GrfError::InvalidParameter("n_samples must be >= 1".into()));
    }
    if b <= 0.0 {
        // exp sums are positive, the event is sure
        return Ok(EstimateWithError {
            estimate: 1.0,
            std_error: 0.0,
            n_samples,
            ess: Some(n_samples as f64),
            warnings: Vec::new(),
        });
    }
    let n = portfolio.len();
    let log_b = b.ln();
    let tilts: Vec<f64> = (0..n)
        .map(|i| (log_b - portfolio.mu[i]) / portfolio.cov[(i, i)])
        .collect();
    let shifts: Vec<DVector<f64>> = (0..n)
        .map(|i| portfolio.cov.column(i) * tilts[i])
        .collect();

    let stats = streams.run_chunks(labels::LOGNORMAL, n_samples, |stream, take| {
        let mut rng = stream.rng();
        let mut acc = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..take {
            let comp = rng.random_range(0..n);
            let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            let x = &portfolio.mu + &shifts[comp] + &portfolio.chol * z;
            let log_w = -log_sum_exp((0..n).map(|i| {
                tilts[i] * (x[i] - portfolio.mu[i])
                    - 0.5 * tilts[i] * tilts[i] * portfolio.cov[(i, i)]
                    - (n as f64).ln()
            }));
            let w = log_w.exp();
            acc.2 += w;
            acc.3 += w * w;
            if log_sum_exp(x.iter().cloned()) > log_b {
                acc.0 += w;
                acc.1 += w * w;
            }
        }
        acc
    });
    let (sum_wi, sum_wi_sq, sum_w, sum_w_sq) = stats
        .into_iter()
        .fold((0.0, 0.0, 0.0, 0.0), |a, s| {
            (a.0 + s.0, a.1 + s.1, a.2 + s.2, a.3 + s.3)
        });
    let nf = n_samples as f64;
    let mean = sum_wi / nf;
    let var = (sum_wi_sq / nf - mean * mean).max(0.0);
    let ess = if sum_w_sq > 0.0 {
        sum_w * sum_w / sum_w_sq
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if ess < 10.0 {
        warnings.push(format!(
            "effective sample size {ess:.2} is degenerate (< 10)"
        ));
    }
    Ok(EstimateWithError {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        n_samples,
        ess: Some(ess),
        warnings,
    })
}
