//! Report builders for the subcommands. JSON reports carry every
//! probability in linear and log10 form; the validate report is CSV by
//! default with the fixed header `b,u,approx,is_estimate,std_error,ratio`.

use grftails::asymptotics::{
    constant_h, h_integral_quadrature, h_prefactor, min_feasible_b, solve_u,
    threshold_for_probability, u_closed_form,
};
use grftails::fieldsim::{
    importance_sampling_mc_at_level, panel_sum_vs_union_mc, resolution_rule, sup_mc,
    EstimateWithError, FieldGrid, SupEstimator,
};
use grftails::kernel::{spectral_moments, standardize, AffineStandardization};
use grftails::lognormal::{one_big_jump_approx, sum_tail_mc, LogNormalPortfolio};
use grftails::math::phi_bar;
use grftails::partition::{build_cover, BoxRegion, CoverSide};
use grftails::{tail_approx, CovarianceModel, Domain, GrfError};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::config::{CliError, RunConfig, ThresholdChoice};

fn render(value: Value) -> String {
    let mut s = serde_json::to_string_pretty(&value).expect("report serialization");
    s.push('\n');
    s
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn vec_entries(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

/// Inserts `name` and `name_log10` fields.
fn put_prob(obj: &mut Map<String, Value>, name: &str, p: f64) {
    obj.insert(name.to_string(), json!(p));
    obj.insert(format!("{name}_log10"), json!(p.log10()));
}

struct Scenario {
    raw_model: CovarianceModel,
    std_model: CovarianceModel,
    transform: AffineStandardization,
    domain: Domain,
    raw_measure: f64,
    std_measure: f64,
    sigma: f64,
}

impl Scenario {
    fn build(config: &RunConfig) -> Result<Self, CliError> {
        let raw_model = config.kernel_model()?;
        let (std_model, transform) = standardize(&raw_model)?;
        let domain = config.domain()?;
        if domain.dim() != raw_model.dim() {
            return Err(CliError::Config(format!(
                "domain dimension {} does not match kernel dimension {}",
                domain.dim(),
                raw_model.dim()
            )));
        }
        let raw_measure = domain.measure();
        let std_measure = raw_measure / transform.measure_factor;
        Ok(Scenario {
            raw_model,
            std_model,
            transform,
            domain,
            raw_measure,
            std_measure,
            sigma: config.sigma()?,
        })
    }

    /// Resolves the threshold choice to raw and standardized thresholds.
    fn thresholds(&self, config: &RunConfig) -> Result<(f64, f64), CliError> {
        match config.threshold_choice()? {
            ThresholdChoice::B(b) => {
                if !(b > 0.0) {
                    return Err(CliError::Config(format!("b must be positive, got {b}")));
                }
                Ok((b, b / self.transform.measure_factor))
            }
            ThresholdChoice::TargetProb(p) => {
                let b_std =
                    threshold_for_probability(&self.std_model, self.std_measure, self.sigma, p)?;
                Ok((b_std * self.transform.measure_factor, b_std))
            }
        }
    }

    fn single_box(&self) -> Result<&BoxRegion, CliError> {
        match self.domain.boxes() {
            [one] => Ok(one),
            _ => Err(CliError::Config(
                "Monte Carlo subcommands need a single-box domain".into(),
            )),
        }
    }

    /// Grid resolution: explicit override, else the bump-resolution rule per
    /// axis in the raw metric (bump width shrinks with the kernel scale).
    fn grid_points(&self, config: &RunConfig, level: f64) -> Result<usize, CliError> {
        if let Some(m) = config.mc.grid_points_per_axis {
            if m < 2 {
                return Err(CliError::Config("grid_points_per_axis must be >= 2".into()));
            }
            return Ok(m);
        }
        let bx = self.single_box()?;
        let sigma_diag = -self.raw_model.hessian_at_zero();
        let m = (0..bx.dim())
            .map(|a| resolution_rule(level * sigma_diag[(a, a)], bx.hi[a] - bx.lo[a]))
            .max()
            .unwrap_or(2);
        Ok(m.min(316)) // keep the dense factorization tractable
    }

    /// Tilt level for the raw-field importance sampler: the threshold root
    /// of the standardized problem, with the mild-tilt fallback below the
    /// feasibility bound.
    fn tilt_level(&self, b_std: f64) -> Result<f64, CliError> {
        match solve_u(b_std, self.sigma, self.std_model.dim()) {
            Ok(u) => Ok(u),
            Err(GrfError::InfeasibleThreshold { .. }) => {
                Ok((b_std.ln() / self.sigma).max(0.5))
            }
            Err(e) => Err(e.into()),
        }
    }
}

pub fn moments(config: &RunConfig) -> Result<String, CliError> {
    let raw = config.kernel_model()?;
    let was_standardized = raw.is_standardized();
    let (std_model, tf) = standardize(&raw)?;
    let sm = spectral_moments(&std_model)?;
    let gamma_det = sm.gamma_det()?;
    Ok(render(json!({
        "d": raw.dim(),
        "was_standardized": was_standardized,
        "measure_factor": tf.measure_factor,
        "sigma_half": matrix_rows(&tf.sigma_half),
        "mu20": vec_entries(&sm.mu20),
        "mu22": matrix_rows(&sm.mu22),
        "quartic_diag": vec_entries(&sm.quartic_diag),
        "gamma_det": gamma_det,
        "one_vector": vec_entries(&sm.one_vector),
    })))
}

pub fn approx(config: &RunConfig) -> Result<String, CliError> {
    let sc = Scenario::build(config)?;
    let (b_raw, b_std) = sc.thresholds(config)?;
    let ta = tail_approx(&sc.std_model, sc.std_measure, sc.sigma, b_std)?;
    let mut obj = Map::new();
    obj.insert("b".into(), json!(b_raw));
    obj.insert("b_standardized".into(), json!(b_std));
    obj.insert("sigma".into(), json!(sc.sigma));
    obj.insert("d".into(), json!(ta.dim));
    obj.insert("u".into(), json!(ta.u));
    obj.insert("u_tilde".into(), json!(ta.u_tilde));
    obj.insert("h".into(), json!(ta.h));
    obj.insert("domain_measure".into(), json!(sc.raw_measure));
    obj.insert("domain_measure_standardized".into(), json!(sc.std_measure));
    obj.insert("measure_factor".into(), json!(sc.transform.measure_factor));
    put_prob(&mut obj, "probability", ta.probability);
    obj.insert("raw_probability".into(), json!(ta.raw_probability));
    obj.insert("warnings".into(), json!(ta.warnings));
    Ok(render(Value::Object(obj)))
}

pub fn u_solve(config: &RunConfig) -> Result<String, CliError> {
    let sigma = config.sigma()?;
    let (b, d) = match config.threshold_choice()? {
        ThresholdChoice::B(b) => {
            let d = match (&config.kernel, config.d) {
                (_, Some(d)) => d,
                (Some(spec), None) => spec.d,
                (None, None) => {
                    return Err(CliError::Config(
                        "u-solve needs `d` (or a kernel to take it from)".into(),
                    ))
                }
            };
            (b, d)
        }
        ThresholdChoice::TargetProb(_) => {
            let sc = Scenario::build(config)?;
            let (b_raw, _) = sc.thresholds(config)?;
            (b_raw, sc.std_model.dim())
        }
    };
    let u = solve_u(b, sigma, d)?;
    let residual =
        (grftails::asymptotics::forward_threshold(u, sigma, d) - b).abs() / b;
    Ok(render(json!({
        "b": b,
        "sigma": sigma,
        "d": d,
        "u": u,
        "u_tilde": u_closed_form(b, sigma, d).ok(),
        "relative_residual": residual,
        "min_feasible_b": min_feasible_b(d),
    })))
}

pub fn h_const(config: &RunConfig) -> Result<String, CliError> {
    let raw = config.kernel_model()?;
    let sigma = config.sigma()?;
    let (std_model, _) = standardize(&raw)?;
    let sm = spectral_moments(&std_model)?;
    let d = std_model.dim();
    let h = constant_h(&sm, sigma, d)?;
    let quad = h_prefactor(&sm, sigma)? * h_integral_quadrature(&sm, sigma, 60)?;
    Ok(render(json!({
        "d": d,
        "sigma": sigma,
        "h": h,
        "h_quadrature": quad,
        "relative_gap": ((h - quad) / h).abs(),
    })))
}

pub fn cover(config: &RunConfig) -> Result<String, CliError> {
    let domain = config.domain()?;
    let kappa = config.kappa.unwrap_or(1.0);
    let delta = config.delta.unwrap_or(0.1);
    let u = match config.u {
        Some(u) => u,
        None => {
            let sc = Scenario::build(config)?;
            if domain.dim() != sc.std_model.dim() {
                return Err(CliError::Config("cover domain/kernel dimensions differ".into()));
            }
            let (_, b_std) = sc.thresholds(config)?;
            solve_u(b_std, sc.sigma, sc.std_model.dim())?
        }
    };
    let cover = build_cover(&domain, u, kappa, delta)?;
    let include_indices = cover.outer_indices.len() <= 512;
    let mut obj = Map::new();
    obj.insert("u".into(), json!(u));
    obj.insert("kappa".into(), json!(kappa));
    obj.insert("delta".into(), json!(delta));
    obj.insert("epsilon".into(), json!(cover.epsilon));
    obj.insert("panel_side".into(), json!(2.0 * cover.epsilon));
    obj.insert("inner_count".into(), json!(cover.inner_indices.len()));
    obj.insert("outer_count".into(), json!(cover.outer_indices.len()));
    obj.insert(
        "inner_measure".into(),
        json!(cover.cover_measure(CoverSide::Inner)),
    );
    obj.insert(
        "outer_measure".into(),
        json!(cover.cover_measure(CoverSide::Outer)),
    );
    obj.insert("domain_measure".into(), json!(domain.measure()));
    if include_indices {
        obj.insert("inner_indices".into(), json!(cover.inner_indices));
        obj.insert("outer_indices".into(), json!(cover.outer_indices));
    }
    Ok(render(Value::Object(obj)))
}

pub fn validate(config: &RunConfig, csv: bool) -> Result<String, CliError> {
    let sc = Scenario::build(config)?;
    let streams = config.streams()?;
    let n = config.n_samples();
    let raw_box = sc.single_box()?.clone();

    let thresholds: Vec<f64> = match (&config.b_values, &config.target_probs) {
        (Some(bs), None) => bs.clone(),
        (None, Some(ps)) => {
            let mut out = Vec::new();
            for &p in ps {
                let b_std =
                    threshold_for_probability(&sc.std_model, sc.std_measure, sc.sigma, p)?;
                out.push(b_std * sc.transform.measure_factor);
            }
            out
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "supply exactly one of `b_values` and `target_probs`".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "validate needs `b_values` or `target_probs`".into(),
            ))
        }
    };

    struct Row {
        b: f64,
        u: f64,
        approx: f64,
        is_estimate: f64,
        std_error: f64,
        ratio: f64,
    }
    let mut rows = Vec::new();
    for &b_raw in &thresholds {
        if !(b_raw > 0.0) {
            return Err(CliError::Config(format!("threshold must be positive, got {b_raw}")));
        }
        let b_std = b_raw / sc.transform.measure_factor;
        let ta = tail_approx(&sc.std_model, sc.std_measure, sc.sigma, b_std)?;
        let level = sc.tilt_level(b_std)?;
        let m = sc.grid_points(config, level)?;
        let grid = FieldGrid::new(&raw_box, m)?;
        let est = importance_sampling_mc_at_level(
            &sc.raw_model,
            &grid,
            sc.sigma,
            b_raw,
            level,
            n,
            &streams,
        )?;
        rows.push(Row {
            b: b_raw,
            u: ta.u,
            approx: ta.probability,
            is_estimate: est.estimate,
            std_error: est.std_error,
            ratio: ta.probability / est.estimate,
        });
    }

    if csv {
        let mut out = String::from("b,u,approx,is_estimate,std_error,ratio\n");
        for r in &rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.b, r.u, r.approx, r.is_estimate, r.std_error, r.ratio
            ));
        }
        Ok(out)
    } else {
        let values: Vec<Value> = rows
            .iter()
            .map(|r| {
                let mut obj = Map::new();
                obj.insert("b".into(), json!(r.b));
                obj.insert("u".into(), json!(r.u));
                put_prob(&mut obj, "approx", r.approx);
                put_prob(&mut obj, "is_estimate", r.is_estimate);
                obj.insert("std_error".into(), json!(r.std_error));
                obj.insert("ratio".into(), json!(r.ratio));
                Value::Object(obj)
            })
            .collect();
        Ok(render(Value::Array(values)))
    }
}

/// CSV dump of raw field draws: one row per (draw, node) with the node
/// coordinates and the field value.
pub fn sample_dump(config: &RunConfig) -> Result<String, CliError> {
    let model = config.kernel_model()?;
    let domain = config.domain()?;
    let streams = config.streams()?;
    let raw_box = match domain.boxes() {
        [one] => one.clone(),
        _ => {
            return Err(CliError::Config(
                "sample dumps need a single-box domain".into(),
            ))
        }
    };
    let m = match config.mc.grid_points_per_axis {
        Some(m) if m >= 1 => m,
        Some(_) => return Err(CliError::Config("grid_points_per_axis must be >= 1".into())),
        None => {
            let sigma_diag = -model.hessian_at_zero();
            (0..raw_box.dim())
                .map(|a| {
                    resolution_rule(4.0 * sigma_diag[(a, a)], raw_box.hi[a] - raw_box.lo[a])
                })
                .max()
                .unwrap_or(2)
                .min(316)
        }
    };
    let grid = FieldGrid::new(&raw_box, m)?;
    let sim = grftails::FieldSimulator::new(&model, &grid)?;
    let draws = config.mc.n_samples.unwrap_or(1).clamp(1, 10_000);
    let d = raw_box.dim();

    let mut out = String::from("sample");
    for a in 0..d {
        out.push_str(&format!(",t{}", a + 1));
    }
    out.push_str(",value\n");
    for (chunk, take) in streams.chunks(draws) {
        let stream = streams.stream(grftails::rng::labels::FIELD_SAMPLE, chunk);
        for (i, sample) in sim.sample_n(stream, take as usize).iter().enumerate() {
            let idx = chunk * grftails::rng::CHUNK + i as u64;
            for (node, value) in grid.nodes.iter().zip(sample.values.iter()) {
                out.push_str(&format!("{idx}"));
                for a in 0..d {
                    out.push_str(&format!(",{}", node[a]));
                }
                out.push_str(&format!(",{value}\n"));
            }
        }
    }
    Ok(out)
}

pub fn panels_vs_union(config: &RunConfig) -> Result<String, CliError> {
    let sc = Scenario::build(config)?;
    if !sc.raw_model.is_standardized() {
        return Err(CliError::Config(
            "panels-vs-union needs a standardized kernel (Hessian -I at 0); covers live in the standardized metric"
                .into(),
        ));
    }
    let streams = config.streams()?;
    let n = config.n_samples();
    let (_, b) = sc.thresholds(config)?;
    let u = solve_u(b, sc.sigma, sc.std_model.dim())?;
    let kappa = config.kappa.unwrap_or(1.0);
    let delta = config.delta.unwrap_or(0.1);
    let cover = build_cover(&sc.domain, u, kappa, delta)?;
    let side = match config.side.as_deref() {
        Some("inner") => CoverSide::Inner,
        Some("outer") => CoverSide::Outer,
        Some(other) => {
            return Err(CliError::Config(format!(
                "side must be \"inner\" or \"outer\", got {other:?}"
            )))
        }
        None => {
            if cover.inner_indices.is_empty() {
                CoverSide::Outer
            } else {
                CoverSide::Inner
            }
        }
    };
    let (union, sum) =
        panel_sum_vs_union_mc(&sc.std_model, &cover, side, sc.sigma, b, n, &streams)?;

    let estimate_obj = |e: &EstimateWithError| {
        let mut obj = Map::new();
        put_prob(&mut obj, "estimate", e.estimate);
        obj.insert("std_error".into(), json!(e.std_error));
        obj.insert("n_samples".into(), json!(e.n_samples));
        obj.insert("ess".into(), json!(e.ess));
        obj.insert("warnings".into(), json!(e.warnings));
        Value::Object(obj)
    };
    Ok(render(json!({
        "b": b,
        "u": u,
        "kappa": kappa,
        "delta": delta,
        "epsilon": cover.epsilon,
        "side": match side { CoverSide::Inner => "inner", CoverSide::Outer => "outer" },
        "panel_count": cover.indices(side).len(),
        "union": estimate_obj(&union),
        "panel_sum": estimate_obj(&sum),
        "ratio_sum_over_union": sum.estimate / union.estimate,
    })))
}

pub fn suprate(config: &RunConfig) -> Result<String, CliError> {
    let sc = Scenario::build(config)?;
    let streams = config.streams()?;
    let n = config.n_samples();
    let levels = config
        .u_levels
        .as_ref()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| CliError::Config("suprate needs non-empty `u_levels`".into()))?;
    let raw_box = sc.single_box()?.clone();
    let max_level = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m = sc.grid_points(config, max_level.max(1.0))?;
    let grid = FieldGrid::new(&raw_box, m)?;
    let d = sc.raw_model.dim();

    let mut rows = Vec::new();
    for &level in levels {
        let method = if level > 0.0 {
            SupEstimator::MeanShift
        } else {
            SupEstimator::Crude
        };
        let est = sup_mc(&sc.raw_model, &grid, level, n, &streams, method)?;
        let shape = sc.std_measure * level.powi(d as i32) * phi_bar(level);
        let mut obj = Map::new();
        obj.insert("u_level".into(), json!(level));
        put_prob(&mut obj, "estimate", est.estimate);
        obj.insert("std_error".into(), json!(est.std_error));
        obj.insert("ess".into(), json!(est.ess));
        obj.insert("rate_shape".into(), json!(shape));
        obj.insert("fitted_g".into(), json!(est.estimate / shape));
        obj.insert("warnings".into(), json!(est.warnings));
        rows.push(Value::Object(obj));
    }
    Ok(render(json!({
        "grid_points_per_axis": m,
        "domain_measure_standardized": sc.std_measure,
        "levels": rows,
    })))
}

pub fn lognormal(config: &RunConfig) -> Result<String, CliError> {
    let section = config
        .lognormal
        .as_ref()
        .ok_or_else(|| CliError::Config("config needs a `lognormal` section".into()))?;
    let b = config
        .b
        .ok_or_else(|| CliError::Config("lognormal needs a threshold `b`".into()))?;
    let n_comp = section.mu.len();
    if section.cov.len() != n_comp || section.cov.iter().any(|r| r.len() != n_comp) {
        return Err(CliError::Config(format!(
            "cov must be a {n_comp}x{n_comp} matrix"
        )));
    }
    let flat: Vec<f64> = section.cov.iter().flatten().cloned().collect();
    let portfolio = LogNormalPortfolio::new(
        DVector::from_vec(section.mu.clone()),
        DMatrix::from_row_slice(n_comp, n_comp, &flat),
    )?;
    let approx = one_big_jump_approx(&portfolio, b)?;
    let streams = config.streams()?;
    let est = sum_tail_mc(&portfolio, b, config.n_samples(), &streams)?;
    let mut obj = Map::new();
    obj.insert("b".into(), json!(b));
    obj.insert("n_components".into(), json!(n_comp));
    put_prob(&mut obj, "approx", approx);
    put_prob(&mut obj, "is_estimate", est.estimate);
    obj.insert("std_error".into(), json!(est.std_error));
    obj.insert("n_samples".into(), json!(est.n_samples));
    obj.insert("ess".into(), json!(est.ess));
    obj.insert("ratio_mc_over_approx".into(), json!(est.estimate / approx));
    obj.insert("warnings".into(), json!(est.warnings));
    Ok(render(Value::Object(obj)))
}
