//! Python bindings: the kernel/moment machinery, the tail approximation and
//! the Monte Carlo validators, mirroring the CLI's semantics.

use grftails::asymptotics::{
    self, constant_h, h_integral_quadrature, h_prefactor, solve_u, threshold_for_probability,
};
use grftails::fieldsim::{
    crude_mc, importance_sampling_mc_at_level, resolution_rule, sup_mc, EstimateWithError,
    FieldGrid, SupEstimator,
};
use grftails::kernel::{spectral_moments, standardize, KernelSpec};
use grftails::lognormal::{one_big_jump_approx, sum_tail_mc, LogNormalPortfolio};
use grftails::partition::{build_cover, BoxRegion, CoverSide, DomainSpec};
use grftails::rng::Streams;
use grftails::{CovarianceModel, GrfError};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: GrfError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

fn estimate_dict<'py>(py: Python<'py>, est: &EstimateWithError) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("estimate", est.estimate)?;
    d.set_item("std_error", est.std_error)?;
    d.set_item("n_samples", est.n_samples)?;
    d.set_item("ess", est.ess)?;
    d.set_item("warnings", est.warnings.clone())?;
    Ok(d)
}

/// A smooth homogeneous covariance model, built from the same JSON document
/// the CLI accepts.
#[pyclass(name = "Kernel")]
struct PyKernel {
    inner: CovarianceModel,
}

#[pymethods]
impl PyKernel {
    /// Kernel from `{"family": "sq_exp"|"rat_quad", "d": n, "L": rows,
    /// "alpha": x}`.
    #[staticmethod]
    fn from_json(spec: &str) -> PyResult<Self> {
        let parsed: KernelSpec = serde_json_from(spec)?;
        Ok(PyKernel {
            inner: parsed.to_model().map_err(err)?,
        })
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn is_standardized(&self) -> bool {
        self.inner.is_standardized()
    }

    fn eval(&self, t: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&DVector::from_vec(t)).map_err(err)
    }

    /// Returns `(standardized_kernel, sigma_half_rows, measure_factor)`.
    fn standardize(&self) -> PyResult<(Self, Vec<Vec<f64>>, f64)> {
        let (std_model, tf) = standardize(&self.inner).map_err(err)?;
        let rows = (0..tf.sigma_half.nrows())
            .map(|i| {
                (0..tf.sigma_half.ncols())
                    .map(|j| tf.sigma_half[(i, j)])
                    .collect()
            })
            .collect();
        Ok((PyKernel { inner: std_model }, rows, tf.measure_factor))
    }

    /// Spectral moments of the standardized model as a dict.
    fn moments<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (std_model, tf) = standardize(&self.inner).map_err(err)?;
        let sm = spectral_moments(&std_model).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("d", std_model.dim())?;
        d.set_item("measure_factor", tf.measure_factor)?;
        d.set_item("mu20", sm.mu20.iter().cloned().collect::<Vec<f64>>())?;
        d.set_item(
            "mu22",
            (0..sm.mu22.nrows())
                .map(|i| (0..sm.mu22.ncols()).map(|j| sm.mu22[(i, j)]).collect())
                .collect::<Vec<Vec<f64>>>(),
        )?;
        d.set_item(
            "quartic_diag",
            sm.quartic_diag.iter().cloned().collect::<Vec<f64>>(),
        )?;
        d.set_item("gamma_det", sm.gamma_det().map_err(err)?)?;
        d.set_item(
            "one_vector",
            sm.one_vector.iter().cloned().collect::<Vec<f64>>(),
        )?;
        Ok(d)
    }

    /// The tail constant of the standardized model.
    fn constant_h(&self, sigma: f64) -> PyResult<f64> {
        let (std_model, _) = standardize(&self.inner).map_err(err)?;
        let sm = spectral_moments(&std_model).map_err(err)?;
        constant_h(&sm, sigma, std_model.dim()).map_err(err)
    }

    /// Quadrature cross-check of the tail constant.
    fn constant_h_quadrature(&self, sigma: f64) -> PyResult<f64> {
        let (std_model, _) = standardize(&self.inner).map_err(err)?;
        let sm = spectral_moments(&std_model).map_err(err)?;
        Ok(h_prefactor(&sm, sigma).map_err(err)?
            * h_integral_quadrature(&sm, sigma, 60).map_err(err)?)
    }

    /// Tail approximation for the raw problem `(domain_measure, b)`; both
    /// the measure and the threshold are mapped through the affine
    /// standardization.
    fn tail_approx<'py>(
        &self,
        py: Python<'py>,
        domain_measure: f64,
        sigma: f64,
        b: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let (ta, tf) =
            asymptotics::tail_approx_raw(&self.inner, domain_measure, sigma, b).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("b", b)?;
        d.set_item("u", ta.u)?;
        d.set_item("u_tilde", ta.u_tilde)?;
        d.set_item("h", ta.h)?;
        d.set_item("measure_factor", tf.measure_factor)?;
        d.set_item("probability", ta.probability)?;
        d.set_item("probability_log10", ta.probability.log10())?;
        d.set_item("raw_probability", ta.raw_probability)?;
        d.set_item("warnings", ta.warnings.clone())?;
        Ok(d)
    }

    /// Threshold (raw scale) whose approximate probability is `target`.
    fn threshold_for_probability(
        &self,
        domain_measure: f64,
        sigma: f64,
        target: f64,
    ) -> PyResult<f64> {
        let (std_model, tf) = standardize(&self.inner).map_err(err)?;
        let b_std = threshold_for_probability(
            &std_model,
            domain_measure / tf.measure_factor,
            sigma,
            target,
        )
        .map_err(err)?;
        Ok(b_std * tf.measure_factor)
    }

    /// Panel-local tail approximation with `eps = kappa u^(delta - 1/2)`.
    fn panel_tail_approx(&self, kappa: f64, delta: f64, sigma: f64, b: f64) -> PyResult<f64> {
        asymptotics::panel_tail_approx(kappa, delta, &self.inner, sigma, b).map_err(err)
    }
}

fn serde_json_from<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("invalid JSON: {e}")))
}

#[pyfunction]
fn solve_threshold(b: f64, sigma: f64, d: usize) -> PyResult<f64> {
    solve_u(b, sigma, d).map_err(err)
}

#[pyfunction]
fn threshold_closed_form(b: f64, sigma: f64, d: usize) -> PyResult<f64> {
    asymptotics::u_closed_form(b, sigma, d).map_err(err)
}

#[pyfunction]
fn min_feasible_b(d: usize) -> f64 {
    asymptotics::min_feasible_b(d)
}

#[pyfunction]
fn sup_rate_shape(u: f64, d: usize) -> f64 {
    asymptotics::sup_rate_shape(u, d)
}

#[pyfunction]
fn borel_tis_bound(sigma_sq_max: f64, x: f64) -> PyResult<f64> {
    asymptotics::borel_tis_bound(sigma_sq_max, x).map_err(err)
}

#[pyfunction]
fn log_det_expansion_error(z: Vec<Vec<f64>>, u: f64) -> PyResult<f64> {
    asymptotics::log_det_expansion_error(&to_matrix(z)?, u).map_err(err)
}

/// Cover summary for a domain given as `[[lo, hi], ...]` (one box) or a list
/// of such boxes, at level `u`.
#[pyfunction]
fn cover_summary<'py>(
    py: Python<'py>,
    domain: String,
    u: f64,
    kappa: f64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec: DomainSpec = serde_json_from(&domain)?;
    let dom = spec.to_domain().map_err(err)?;
    let cover = build_cover(&dom, u, kappa, delta).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("epsilon", cover.epsilon)?;
    d.set_item("inner_count", cover.inner_indices.len())?;
    d.set_item("outer_count", cover.outer_indices.len())?;
    d.set_item("inner_measure", cover.cover_measure(CoverSide::Inner))?;
    d.set_item("outer_measure", cover.cover_measure(CoverSide::Outer))?;
    d.set_item("domain_measure", dom.measure())?;
    Ok(d)
}

#[allow(clippy::too_many_arguments)]
fn grid_for(
    kernel: &PyKernel,
    lo: Vec<f64>,
    hi: Vec<f64>,
    level: f64,
    m: Option<usize>,
) -> PyResult<FieldGrid> {
    let region = BoxRegion::new(lo, hi).map_err(err)?;
    let m = match m {
        Some(m) => m,
        None => {
            let sigma_diag = -kernel.inner.hessian_at_zero();
            (0..region.dim())
                .map(|a| {
                    resolution_rule(
                        level.max(1.0) * sigma_diag[(a, a)],
                        region.hi[a] - region.lo[a],
                    )
                })
                .max()
                .unwrap_or(2)
                .min(316)
        }
    };
    FieldGrid::new(&region, m).map_err(err)
}

/// Importance-sampling estimate of `P(int exp(sigma f) > b)` over the box
/// `[lo, hi]`, with the tilt level from the standardized threshold equation.
#[pyfunction]
#[pyo3(signature = (kernel, lo, hi, sigma, b, n, seed, workers=1, m=None))]
#[allow(clippy::too_many_arguments)]
fn exceedance_is<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    lo: Vec<f64>,
    hi: Vec<f64>,
    sigma: f64,
    b: f64,
    n: u64,
    seed: u64,
    workers: usize,
    m: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let (_, tf) = standardize(&kernel.inner).map_err(err)?;
    let b_std = b / tf.measure_factor;
    let level = match solve_u(b_std, sigma, kernel.inner.dim()) {
        Ok(u) => u,
        Err(GrfError::InfeasibleThreshold { .. }) => (b_std.ln() / sigma).max(0.5),
        Err(e) => return Err(err(e)),
    };
    let grid = grid_for(kernel, lo, hi, level, m)?;
    let est = importance_sampling_mc_at_level(
        &kernel.inner,
        &grid,
        sigma,
        b,
        level,
        n,
        &Streams::new(seed, workers),
    )
    .map_err(err)?;
    let d = estimate_dict(py, &est)?;
    d.set_item("tilt_level", level)?;
    d.set_item("grid_points_per_axis", grid.points_per_axis)?;
    Ok(d)
}

/// Crude Monte Carlo counterpart of [`exceedance_is`].
#[pyfunction]
#[pyo3(signature = (kernel, lo, hi, sigma, b, n, seed, workers=1, m=None))]
#[allow(clippy::too_many_arguments)]
fn exceedance_crude<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    lo: Vec<f64>,
    hi: Vec<f64>,
    sigma: f64,
    b: f64,
    n: u64,
    seed: u64,
    workers: usize,
    m: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = grid_for(kernel, lo, hi, 4.0, m)?;
    let est = crude_mc(
        &kernel.inner,
        &grid,
        sigma,
        b,
        n,
        &Streams::new(seed, workers),
    )
    .map_err(err)?;
    estimate_dict(py, &est)
}

/// Supremum-exceedance estimate over the box grid; mean-shift proposal when
/// the level is positive.
#[pyfunction]
#[pyo3(signature = (kernel, lo, hi, level, n, seed, workers=1, m=None))]
#[allow(clippy::too_many_arguments)]
fn sup_exceedance<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    lo: Vec<f64>,
    hi: Vec<f64>,
    level: f64,
    n: u64,
    seed: u64,
    workers: usize,
    m: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = grid_for(kernel, lo, hi, level, m)?;
    let method = if level > 0.0 {
        SupEstimator::MeanShift
    } else {
        SupEstimator::Crude
    };
    let est = sup_mc(
        &kernel.inner,
        &grid,
        level,
        n,
        &Streams::new(seed, workers),
        method,
    )
    .map_err(err)?;
    estimate_dict(py, &est)
}

/// One-big-jump approximation for a log-normal sum.
#[pyfunction]
fn lognormal_one_big_jump(mu: Vec<f64>, cov: Vec<Vec<f64>>, b: f64) -> PyResult<f64> {
    let p = LogNormalPortfolio::new(DVector::from_vec(mu), to_matrix(cov)?).map_err(err)?;
    one_big_jump_approx(&p, b).map_err(err)
}

/// Importance-sampling estimate of the log-normal sum tail.
#[pyfunction]
#[pyo3(signature = (mu, cov, b, n, seed, workers=1))]
fn lognormal_sum_tail<'py>(
    py: Python<'py>,
    mu: Vec<f64>,
    cov: Vec<Vec<f64>>,
    b: f64,
    n: u64,
    seed: u64,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let p = LogNormalPortfolio::new(DVector::from_vec(mu), to_matrix(cov)?).map_err(err)?;
    let est = sum_tail_mc(&p, b, n, &Streams::new(seed, workers)).map_err(err)?;
    let d = estimate_dict(py, &est)?;
    d.set_item("approx", one_big_jump_approx(&p, b).map_err(err)?)?;
    Ok(d)
}

#[pymodule]
fn grftails_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(solve_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(min_feasible_b, m)?)?;
    m.add_function(wrap_pyfunction!(sup_rate_shape, m)?)?;
    m.add_function(wrap_pyfunction!(borel_tis_bound, m)?)?;
    m.add_function(wrap_pyfunction!(log_det_expansion_error, m)?)?;
    m.add_function(wrap_pyfunction!(cover_summary, m)?)?;
    m.add_function(wrap_pyfunction!(exceedance_is, m)?)?;
    m.add_function(wrap_pyfunction!(exceedance_crude, m)?)?;
    m.add_function(wrap_pyfunction!(sup_exceedance, m)?)?;
    m.add_function(wrap_pyfunction!(lognormal_one_big_jump, m)?)?;
    m.add_function(wrap_pyfunction!(lognormal_sum_tail, m)?)?;
    Ok(())
}
