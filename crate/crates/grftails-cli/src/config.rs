//! Run configuration shared by all subcommands, plus the error-to-exit-code
//! mapping.

use grftails::kernel::KernelSpec;
use grftails::partition::DomainSpec;
use grftails::rng::Streams;
use grftails::{CovarianceModel, Domain, GrfError};
use serde::Deserialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Parameters outside the feasible range (exit 3).
    Infeasible(String),
    /// Numerical failure (exit 4).
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Infeasible(m) | CliError::Numerical(m) => {
                write!(f, "{m}")
            }
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<GrfError> for CliError {
    fn from(e: GrfError) -> Self {
        match e {
            GrfError::InfeasibleThreshold { .. } => CliError::Infeasible(e.to_string()),
            GrfError::DimensionMismatch { .. }
            | GrfError::InvalidKernel(_)
            | GrfError::EmptyDomain => CliError::Config(e.to_string()),
            GrfError::InvalidParameter(ref m) => {
                // target probabilities outside the representable range are a
                // feasibility problem, not a config syntax problem
                if m.contains("target probability") || m.contains("overflows") {
                    CliError::Infeasible(e.to_string())
                } else {
                    CliError::Config(e.to_string())
                }
            }
            GrfError::NotStandardized { .. }
            | GrfError::SingularHessian(_)
            | GrfError::InvalidMoments(_)
            | GrfError::IllConditioned(_) => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_samples: Option<u64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub grid_points_per_axis: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalSection {
    pub mu: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: Option<KernelSpec>,
    pub domain: Option<DomainSpec>,
    pub sigma: Option<f64>,
    pub b: Option<f64>,
    pub target_prob: Option<f64>,
    #[serde(default)]
    pub mc: McSection,
    pub kappa: Option<f64>,
    pub delta: Option<f64>,
    /// Explicit cover level; otherwise derived from the threshold.
    pub u: Option<f64>,
    /// Dimension for u-solve when no kernel is given.
    pub d: Option<usize>,
    pub b_values: Option<Vec<f64>>,
    pub target_probs: Option<Vec<f64>>,
    pub u_levels: Option<Vec<f64>>,
    /// Cover side for panels-vs-union: "inner" (default when non-empty) or
    /// "outer".
    pub side: Option<String>,
    pub lognormal: Option<LogNormalSection>,
}

impl RunConfig {
    pub fn apply_overrides(&mut self, seed: Option<u64>, workers: Option<usize>) {
        if seed.is_some() {
            self.mc.seed = seed;
        }
        if let Some(w) = workers {
            self.mc.workers = Some(w);
        }
    }

    pub fn kernel_model(&self) -> Result<CovarianceModel, CliError> {
        let spec = self
            .kernel
            .as_ref()
            .ok_or_else(|| CliError::Config("config needs a `kernel` section".into()))?;
        Ok(spec.to_model()?)
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        let spec = self
            .domain
            .as_ref()
            .ok_or_else(|| CliError::Config("config needs a `domain` section".into()))?;
        Ok(spec.to_domain()?)
    }

    pub fn sigma(&self) -> Result<f64, CliError> {
        let sigma = self
            .sigma
            .ok_or_else(|| CliError::Config("config needs `sigma`".into()))?;
        if !(sigma > 0.0) {
            return Err(CliError::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(sigma)
    }

    /// Exactly one of `b` / `target_prob`.
    pub fn threshold_choice(&self) -> Result<ThresholdChoice, CliError> {
        match (self.b, self.target_prob) {
            (Some(b), None) => Ok(ThresholdChoice::B(b)),
            (None, Some(p)) => Ok(ThresholdChoice::TargetProb(p)),
            (Some(_), Some(_)) => Err(CliError::Config(
                "supply exactly one of `b` and `target_prob`, not both".into(),
            )),
            (None, None) => Err(CliError::Config(
                "supply exactly one of `b` and `target_prob`".into(),
            )),
        }
    }

    /// Seed is mandatory for Monte Carlo subcommands.
    pub fn streams(&self) -> Result<Streams, CliError> {
        let seed = self.mc.seed.ok_or_else(|| {
            CliError::Config("Monte Carlo subcommands need a seed (--seed or mc.seed)".into())
        })?;
        Ok(Streams::new(seed, self.workers()))
    }

    pub fn workers(&self) -> usize {
        if let Some(w) = self.mc.workers {
            return w.max(1);
        }
        if let Ok(env) = std::env::var("GRFTAILS_WORKERS") {
            if let Ok(w) = env.trim().parse::<usize>() {
                return w.max(1);
            }
        }
        1
    }

    pub fn n_samples(&self) -> u64 {
        self.mc.n_samples.unwrap_or(100_000).max(1)
    }
}

pub enum ThresholdChoice {
    B(f64),
    TargetProb(f64),
}
