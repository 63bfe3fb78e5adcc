//! Tail asymptotics for exponential integrals of smooth homogeneous Gaussian
//! random fields, with the simulation machinery to validate them.
//!
//! The centerpiece is the approximation
//! `P(int_T exp(sigma f) > b) ~ H mes(T) u^(d-1) exp(-u^2/2)` for a
//! standardized field on a compact box domain, where `u` solves a
//! transcendental threshold equation and the constant `H` is an explicit
//! function of the spectral moments of the covariance at the origin. Around
//! it sit:
//!
//! * [`kernel`] - covariance families, spectral moments, standardization;
//! * [`asymptotics`] - the threshold solver, the constant `H`, panel-local
//!   approximations and auxiliary analytic bounds;
//! * [`partition`] - inner/outer panel covers of box domains;
//! * [`fieldsim`] - exact grid simulation plus crude and mean-shift
//!   importance-sampling estimators of the rare-event probabilities;
//! * [`lognormal`] - the finite-sum log-normal analogue;
//! * [`rng`] - seeded, worker-count-independent random number streams.
//!
//! All estimators are deterministic functions of `(seed, worker count)` with
//! the worker count affecting scheduling only, never the result.

// validation guards use `!(x > 0.0)` so NaN fails closed
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod fieldsim;
pub mod kernel;
pub mod lognormal;
pub mod math;
pub mod partition;
pub mod rng;

pub use asymptotics::{
    borel_tis_bound, constant_h, log_det_expansion_error, panel_tail_approx, solve_u,
    sup_rate_shape, tail_approx, tail_approx_raw, threshold_for_probability, u_closed_form,
    TailApproximation,
};
pub use error::{GrfError, Result};
pub use fieldsim::{
    crude_mc, importance_sampling_mc, importance_sampling_mc_at_level, integral_functional,
    panel_sum_vs_union_mc, sample_field, sup_mc, EstimateWithError, FieldGrid, FieldSample,
    FieldSimulator, SupEstimator,
};
pub use kernel::{
    joint_covariance, spectral_moments, standardize, AffineStandardization, CovarianceModel,
    KernelFamily, KernelSpec, SpectralMoments,
};
pub use lognormal::{one_big_jump_approx, sum_tail_mc, LogNormalPortfolio};
pub use partition::{build_cover, sum_panel_approx, BoxRegion, CoverSide, Domain, DomainSpec, PanelCover};
pub use rng::{StreamId, Streams};
