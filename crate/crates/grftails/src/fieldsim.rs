//! Exact simulation of the field on finite grids and rare-event Monte Carlo
//! estimators for the exponential-integral and supremum exceedances.
//!
//! Simulation is by dense Cholesky factorization of the grid covariance,
//! which is exact at any grid size this crate targets (thousands of nodes).
//! The rare-event estimator is a mean-shift mixture: a bump location `t*` is
//! drawn uniformly over the grid nodes and the field mean is shifted by
//! `u C(. - t*)`, the conditional mean of the field given `f(t*) = u`. The
//! likelihood ratio against the mixture is
//! `[ (1/N) sum_j exp(u f(t_j) - u^2/2) ]^(-1)`,
//! available in closed form because each component is an exponential tilt.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::asymptotics::{log_mixture_tilt, solve_u};
use crate::error::{GrfError, Result};
use crate::kernel::CovarianceModel;
use crate::math::log_sum_exp;
use crate::partition::{BoxRegion, CoverSide, PanelCover};
use crate::rng::{labels, StreamId, Streams};

/// Lattice over a box with trapezoidal quadrature weights.
///
/// Nodes are in row-major order (last axis fastest). A single point per axis
/// degenerates to the midpoint rule so that one-node grids remain usable.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub region: BoxRegion,
    pub points_per_axis: usize,
    pub nodes: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl FieldGrid {
    pub fn new(region: &BoxRegion, points_per_axis: usize) -> Result<Self> {
        if points_per_axis == 0 {
            return Err(GrfError::InvalidParameter(
                "points_per_axis must be >= 1".into(),
            ));
        }
        let d = region.dim();
        let m = points_per_axis;
        let n_nodes = m.checked_pow(d as u32).filter(|&n| n <= 100_000).ok_or_else(|| {
            GrfError::InvalidParameter(format!("grid of {m}^{d} nodes is too large"))
        })?;

        let axis_coords: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let (lo, hi) = (region.lo[a], region.hi[a]);
                if m == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    let h = (hi - lo) / (m - 1) as f64;
                    (0..m).map(|i| lo + h * i as f64).collect()
                }
            })
            .collect();
        let axis_weights: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let (lo, hi) = (region.lo[a], region.hi[a]);
                if m == 1 {
                    vec![hi - lo]
                } else {
                    let h = (hi - lo) / (m - 1) as f64;
                    (0..m)
                        .map(|i| if i == 0 || i == m - 1 { 0.5 * h } else { h })
                        .collect()
                }
            })
            .collect();

        let mut nodes = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        let mut idx = vec![0usize; d];
        loop {
            let mut t = DVector::zeros(d);
            let mut w = 1.0;
            for a in 0..d {
                t[a] = axis_coords[a][idx[a]];
                w *= axis_weights[a][idx[a]];
            }
            nodes.push(t);
            weights.push(w);
            // row-major odometer: last axis fastest
            let mut a = d;
            loop {
                if a == 0 {
                    return Ok(FieldGrid {
                        region: region.clone(),
                        points_per_axis: m,
                        nodes,
                        weights,
                    });
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < m {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Grid points per axis for level `u` on a box of side `side_len`: the
/// excursion bump has spatial scale `u^(-1/2)` and should span at least
/// eight nodes, so `m >= 8 sqrt(u) * side_len`.
pub fn resolution_rule(u: f64, side_len: f64) -> usize {
    ((8.0 * u.sqrt() * side_len).ceil() as usize).max(2)
}

/// One exact draw of the field on a grid.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub values: DVector<f64>,
    /// Stream that produced the draw; replaying it reproduces the sample
    /// bit for bit.
    pub seed_path: StreamId,
}

/// Factorized grid covariance, reusable across many draws.
pub struct FieldSimulator {
    pub grid: FieldGrid,
    gram: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Diagonal jitter that was needed to factorize, 0 when none.
    pub jitter: f64,
}

impl FieldSimulator {
    pub fn new(model: &CovarianceModel, grid: &FieldGrid) -> Result<Self> {
        if model.dim() != grid.region.dim() {
            return Err(GrfError::DimensionMismatch {
                expected: model.dim(),
                actual: grid.region.dim(),
            });
        }
        let n = grid.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = model.eval(&(&grid.nodes[i] - &grid.nodes[j]))?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        // jitter ladder: exact factorization preferred, escalating diagonal
        // regularization up to 1e-8 before giving up
        let mut jitter = 0.0;
        loop {
            let mut work = gram.clone();
            for i in 0..n {
                work[(i, i)] += jitter;
            }
            if let Some(chol) = nalgebra::Cholesky::new(work) {
                return Ok(FieldSimulator {
                    grid: grid.clone(),
                    gram,
                    chol: chol.unpack(),
                    jitter,
                });
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
            if jitter > 1e-8 {
                return Err(GrfError::IllConditioned(format!(
                    "Cholesky failed on {n} nodes even with diagonal jitter 1e-8"
                )));
            }
        }
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Mean-zero draw from the exact grid law.
    pub fn sample(&self, stream: StreamId) -> FieldSample {
        self.sample_with_mean(stream, None)
    }

    /// `count` consecutive draws from one stream, in draw order.
    pub fn sample_n(&self, stream: StreamId, count: usize) -> Vec<FieldSample> {
        let mut rng = stream.rng();
        (0..count)
            .map(|_| self.sample_with_mean_rng(&mut rng, stream, None))
            .collect()
    }

    fn sample_with_mean(&self, stream: StreamId, mean: Option<&DVector<f64>>) -> FieldSample {
        let mut rng = stream.rng();
        self.sample_with_mean_rng(&mut rng, stream, mean)
    }

    fn sample_with_mean_rng(
        &self,
        rng: &mut rand_chacha::ChaCha12Rng,
        stream: StreamId,
        mean: Option<&DVector<f64>>,
    ) -> FieldSample {
        let n = self.grid.len();
        let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let mut values = &self.chol * z;
        if let Some(m) = mean {
            values += m;
        }
        FieldSample {
            values,
            seed_path: stream,
        }
    }
}

/// One exact field draw on `grid`; factorizes the covariance on every call,
/// so batch work should go through [`FieldSimulator`].
pub fn sample_field(
    model: &CovarianceModel,
    grid: &FieldGrid,
    stream: StreamId,
) -> Result<FieldSample> {
    Ok(FieldSimulator::new(model, grid)?.sample(stream))
}

/// Quadrature value of `int exp(sigma f)` over the grid.
///
/// Uses direct accumulation when safe and falls back to log-sum-exp when the
/// exponent would overflow.
pub fn integral_functional(sample: &FieldSample, grid: &FieldGrid, sigma: f64) -> f64 {
    let max_exp = sample
        .values
        .iter()
        .map(|v| sigma * v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_exp < 700.0 {
        grid.weights
            .iter()
            .zip(sample.values.iter())
            .map(|(w, v)| w * (sigma * v).exp())
            .sum()
    } else {
        log_integral_functional(sample, grid, sigma).exp()
    }
}

/// `ln` of [`integral_functional`], safe against overflow; what the
/// rare-event drivers compare against `ln b`.
pub fn log_integral_functional(sample: &FieldSample, grid: &FieldGrid, sigma: f64) -> f64 {
    log_sum_exp(
        grid.weights
            .iter()
            .zip(sample.values.iter())
            .map(|(w, v)| w.ln() + sigma * v),
    )
}

/// Monte Carlo estimate with error and diagnostics.
#[derive(Debug, Clone)]
pub struct EstimateWithError {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: u64,
    /// Effective sample size `(sum w)^2 / sum w^2`; importance sampling only.
    pub ess: Option<f64>,
    pub warnings: Vec<String>,
}

fn validate_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(GrfError::InvalidParameter("n_samples must be >= 1".into()));
    }
    Ok(())
}

/// Crude Monte Carlo estimate of `P(I_sigma > b)` at grid resolution.
pub fn crude_mc(
    model: &CovarianceModel,
    grid: &FieldGrid,
    sigma: f64,
    b: f64,
    n: u64,
    streams: &Streams,
) -> Result<EstimateWithError> {
    validate_n(n)?;
    let sim = FieldSimulator::new(model, grid)?;
    let log_b = b.ln(); // -inf for b = 0: every draw is a hit
    let hits: u64 = streams
        .run_chunks(labels::CRUDE, n, |stream, take| {
            let mut rng = stream.rng();
            let mut hits = 0u64;
            for _ in 0..take {
                let sample = sim.sample_with_mean_rng(&mut rng, stream, None);
                if log_integral_functional(&sample, grid, sigma) > log_b {
                    hits += 1;
                }
            }
            hits
        })
        .into_iter()
        .sum();
    let p = hits as f64 / n as f64;
    Ok(EstimateWithError {
        estimate: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        n_samples: n,
        ess: None,
        warnings: Vec::new(),
    })
}

/// Sufficient statistics of one importance-sampling chunk.
#[derive(Debug, Clone, Copy, Default)]
struct IsStats {
    sum_wi: f64,
    sum_wi_sq: f64,
    sum_w: f64,
    sum_w_sq: f64,
}

fn merge_is_stats(chunks: Vec<IsStats>) -> IsStats {
    chunks.into_iter().fold(IsStats::default(), |a, c| IsStats {
        sum_wi: a.sum_wi + c.sum_wi,
        sum_wi_sq: a.sum_wi_sq + c.sum_wi_sq,
        sum_w: a.sum_w + c.sum_w,
        sum_w_sq: a.sum_w_sq + c.sum_w_sq,
    })
}

fn finish_is(stats: IsStats, n: u64) -> EstimateWithError {
    let nf = n as f64;
    let mean = stats.sum_wi / nf;
    let var = (stats.sum_wi_sq / nf - mean * mean).max(0.0);
    let ess = if stats.sum_w_sq > 0.0 {
        stats.sum_w * stats.sum_w / stats.sum_w_sq
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if ess < 10.0 {
        warnings.push(format!(
            "effective sample size {ess:.2} is degenerate (< 10); the proposal is poorly matched"
        ));
    }
    EstimateWithError {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        n_samples: n,
        ess: Some(ess),
        warnings,
    }
}

fn run_is<F>(sim: &FieldSimulator, level: f64, n: u64, streams: &Streams, label: u64, hit: F) -> IsStats
where
    F: Fn(&FieldSample) -> bool + Sync,
{
    let n_nodes = sim.grid.len();
    let stats = streams.run_chunks(label, n, |stream, take| {
        let mut rng = stream.rng();
        let mut acc = IsStats::default();
        for _ in 0..take {
            let j = rng.random_range(0..n_nodes);
            let shift = sim.gram.column(j) * level;
            let sample = sim.sample_with_mean_rng(&mut rng, stream, Some(&shift.into_owned()));
            let log_w = -log_mixture_tilt(sample.values.as_slice(), level);
            let w = log_w.exp();
            acc.sum_w += w;
            acc.sum_w_sq += w * w;
            if hit(&sample) {
                acc.sum_wi += w;
                acc.sum_wi_sq += w * w;
            }
        }
        acc
    });
    merge_is_stats(stats)
}

/// Importance-sampling estimate of `P(I_sigma > b)` under the mean-shift
/// mixture proposal at level `u = solve_u(b, sigma, d)`.
pub fn importance_sampling_mc(
    model: &CovarianceModel,
    grid: &FieldGrid,
    sigma: f64,
    b: f64,
    n: u64,
    streams: &Streams,
) -> Result<EstimateWithError> {
    if b > 0.0 {
        let u = match solve_u(b, sigma, model.dim()) {
            Ok(u) => u,
            // below the feasibility threshold the event is no longer rare;
            // any positive tilt keeps the estimator unbiased (the likelihood
            // ratio is exact for every level), so fall back to a mild one
            Err(GrfError::InfeasibleThreshold { .. }) => (b.ln() / sigma).max(0.5),
            Err(e) => return Err(e),
        };
        importance_sampling_mc_at_level(model, grid, sigma, b, u, n, streams)
    } else {
        importance_sampling_mc_at_level(model, grid, sigma, b, 1.0, n, streams)
    }
}

/// Importance sampling with an explicit tilt level. Useful when the level
/// comes from a transformed problem (a raw kernel whose threshold was mapped
/// through its affine standardization); the estimate is unbiased for every
/// positive level.
pub fn importance_sampling_mc_at_level(
    model: &CovarianceModel,
    grid: &FieldGrid,
    sigma: f64,
    b: f64,
    level: f64,
    n: u64,
    streams: &Streams,
) -> Result<EstimateWithError> {
    validate_n(n)?;
    if b <= 0.0 {
        // the integrand is positive, so the event is sure
        return Ok(EstimateWithError {
            estimate: 1.0,
            std_error: 0.0,
            n_samples: n,
            ess: Some(n as f64),
            warnings: Vec::new(),
        });
    }
    if !(level > 0.0) {
        return Err(GrfError::InvalidParameter(format!(
            "tilt level must be positive, got {level}"
        )));
    }
    let sim = FieldSimulator::new(model, grid)?;
    let log_b = b.ln();
    let stats = run_is(&sim, level, n, streams, labels::IMPORTANCE, |sample| {
        log_integral_functional(sample, grid, sigma) > log_b
    });
    Ok(finish_is(stats, n))
}

/// Estimator choice for [`sup_mc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupEstimator {
    Crude,
    /// Mean-shift mixture at the exceedance level itself.
    MeanShift,
}

/// Estimates `P(max over grid nodes f > u_level)`.
pub fn sup_mc(
    model: &CovarianceModel,
    grid: &FieldGrid,
    u_level: f64,
    n: u64,
    streams: &Streams,
    method: SupEstimator,
) -> Result<EstimateWithError> {
    validate_n(n)?;
    let sim = FieldSimulator::new(model, grid)?;
    let exceeds = |sample: &FieldSample| sample.values.iter().any(|&v| v > u_level);
    match method {
        SupEstimator::Crude => {
            let hits: u64 = streams
                .run_chunks(labels::SUP, n, |stream, take| {
                    let mut rng = stream.rng();
                    let mut hits = 0u64;
                    for _ in 0..take {
                        let sample = sim.sample_with_mean_rng(&mut rng, stream, None);
                        if exceeds(&sample) {
                            hits += 1;
                        }
                    }
                    hits
                })
                .into_iter()
                .sum();
            let p = hits as f64 / n as f64;
            Ok(EstimateWithError {
                estimate: p,
                std_error: (p * (1.0 - p) / n as f64).sqrt(),
                n_samples: n,
                ess: None,
                warnings: Vec::new(),
            })
        }
        SupEstimator::MeanShift => {
            if !(u_level > 0.0) {
                return Err(GrfError::InvalidParameter(
                    "mean-shift sup estimator needs a positive level".into(),
                ));
            }
            let stats = run_is(&sim, u_level, n, streams, labels::SUP, exceeds);
            Ok(finish_is(stats, n))
        }
    }
}

/// Grid suprema of `n` independent draws, in chunk order; the raw material
/// for concentration checks on the centered supremum.
pub fn sup_draws(
    model: &CovarianceModel,
    grid: &FieldGrid,
    n: u64,
    streams: &Streams,
) -> Result<Vec<f64>> {
    validate_n(n)?;
    let sim = FieldSimulator::new(model, grid)?;
    let per_chunk = streams.run_chunks(labels::FIELD_SAMPLE, n, |stream, take| {
        let mut rng = stream.rng();
        (0..take)
            .map(|_| {
                let sample = sim.sample_with_mean_rng(&mut rng, stream, None);
                sample.values.max()
            })
            .collect::<Vec<f64>>()
    });
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Compares the union event with the panel-sum decomposition on a cover:
/// returns `(union_estimate, sum_estimate)` where the first estimates
/// `P(I_sigma(union of panels) > b)` and the second sums per-panel
/// importance-sampling estimates of `P(I_sigma(panel) > b)`.
///
/// Panels are congruent translates and the field is homogeneous, so the
/// per-panel probabilities coincide; under the shared streams the per-panel
/// estimates are bit-identical and the sum is `count` times the first panel's
/// estimate. The union run reuses the same streams (common random numbers),
/// which for a single-panel cover makes the two outputs the same estimator.
pub fn panel_sum_vs_union_mc(
    model: &CovarianceModel,
    cover: &PanelCover,
    side: CoverSide,
    sigma: f64,
    b: f64,
    n: u64,
    streams: &Streams,
) -> Result<(EstimateWithError, EstimateWithError)> {
    validate_n(n)?;
    let indices = cover.indices(side);
    if indices.is_empty() {
        return Err(GrfError::InvalidParameter(
            "chosen cover side has no panels".into(),
        ));
    }
    let d = model.dim();
    let u = solve_u(b, sigma, d)?;
    let log_b = b.ln();

    let panel_box = cover.panel_region(&indices[0]);
    let m_panel = resolution_rule(u, 2.0 * cover.epsilon).max(9);
    let panel_grid = FieldGrid::new(&panel_box, m_panel)?;
    let panel_sim = FieldSimulator::new(model, &panel_grid)?;
    let stats = run_is(&panel_sim, u, n, streams, labels::PANELS_VS_UNION, |s| {
        log_integral_functional(s, &panel_grid, sigma) > log_b
    });
    let one_panel = finish_is(stats, n);
    let count = indices.len() as f64;
    let sum_est = EstimateWithError {
        estimate: count * one_panel.estimate,
        std_error: count * one_panel.std_error,
        n_samples: n,
        ess: one_panel.ess,
        warnings: one_panel.warnings.clone(),
    };

    let union_box = cover.union_region(side)?;
    let longest = union_box
        .side_lengths()
        .into_iter()
        .fold(0.0f64, f64::max);
    let m_union = resolution_rule(u, longest).max(9);
    let union_grid = FieldGrid::new(&union_box, m_union)?;
    let union_sim = FieldSimulator::new(model, &union_grid)?;
    let stats_u = run_is(&union_sim, u, n, streams, labels::PANELS_VS_UNION, |s| {
        log_integral_functional(s, &union_grid, sigma) > log_b
    });
    let union_est = finish_is(stats_u, n);

    Ok((union_est, sum_est))
}
