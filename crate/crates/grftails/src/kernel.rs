//! Smooth homogeneous covariance kernels and their spectral moments.
//!
//! Two isotropic-after-scaling families are built in, both six times
//! continuously differentiable with three-times differentiable sample paths:
//!
//! * squared exponential, `C(t) = exp(-|Lt|^2 / 2)`;
//! * rational quadratic, `C(t) = (1 + |Lt|^2 / (2 alpha))^(-alpha)` with
//!   `alpha > d/2 + 3`.
//!
//! Both have Hessian `-L^T L` at the origin, so a model is *standardized*
//! (unit-variance field with independent unit-variance gradient) exactly when
//! `L^T L = I`. [`standardize`] maps any model to that form by a linear
//! change of coordinates on the domain.
//!
//! Second derivatives of `C` at 0 are covariances between the field and its
//! second derivatives; fourth derivatives are covariances among the second
//! derivatives. Symmetric index pairs are always flattened in the order
//! `(1,1), ..., (d,d)` then `(i,j)` for `i < j`, and every downstream matrix
//! block relies on that order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GrfError, Result};

/// Tolerance on `max |Hessian(C)(0) + I|` below which a model counts as
/// standardized.
pub const STANDARDIZATION_TOL: f64 = 1e-10;

/// Built-in kernel families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    SquaredExponential,
    /// Rational quadratic with shape parameter `alpha`.
    RationalQuadratic { alpha: f64 },
}

impl KernelFamily {
    /// Multiplier on the Gaussian fourth-derivative structure at the origin:
    /// 1 for the squared exponential, (alpha+1)/alpha for the rational
    /// quadratic.
    fn quartic_coeff(&self) -> f64 {
        match self {
            KernelFamily::SquaredExponential => 1.0,
            KernelFamily::RationalQuadratic { alpha } => (alpha + 1.0) / alpha,
        }
    }
}

/// A smooth homogeneous covariance `C(t)` on `R^d`.
///
/// Immutable after construction; `C(0) = 1` and `C(t) = C(-t)` hold by
/// construction for both families.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    family: KernelFamily,
    dim: usize,
    /// Length-scale / anisotropy matrix `L`.
    scale: DMatrix<f64>,
    /// Cached `M = L^T L`.
    m: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn new(family: KernelFamily, dim: usize, scale: DMatrix<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(GrfError::InvalidKernel("dimension must be >= 1".into()));
        }
        if scale.nrows() != dim || scale.ncols() != dim {
            return Err(GrfError::DimensionMismatch {
                expected: dim,
                actual: scale.nrows(),
            });
        }
        let det = scale.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(GrfError::InvalidKernel(format!(
                "scale matrix is singular (det = {det:.3e})"
            )));
        }
        if let KernelFamily::RationalQuadratic { alpha } = family {
            let bound = dim as f64 / 2.0 + 3.0;
            if !(alpha > bound) {
                return Err(GrfError::InvalidKernel(format!(
                    "rational-quadratic alpha must exceed d/2 + 3 = {bound}; got {alpha}"
                )));
            }
        }
        let m = scale.transpose() * &scale;
        Ok(CovarianceModel {
            family,
            dim,
            scale,
            m,
        })
    }

    /// Squared-exponential kernel with scale matrix `L`.
    pub fn squared_exponential(dim: usize, scale: DMatrix<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, dim, scale)
    }

    /// Rational-quadratic kernel with scale matrix `L`.
    pub fn rational_quadratic(dim: usize, scale: DMatrix<f64>, alpha: f64) -> Result<Self> {
        Self::new(KernelFamily::RationalQuadratic { alpha }, dim, scale)
    }

    /// Standardized model (`L = I`) of the given family.
    pub fn standard(family: KernelFamily, dim: usize) -> Result<Self> {
        Self::new(family, dim, DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    fn check_dim(&self, t: &DVector<f64>) -> Result<()> {
        if t.len() != self.dim {
            return Err(GrfError::DimensionMismatch {
                expected: self.dim,
                actual: t.len(),
            });
        }
        Ok(())
    }

    /// Evaluates `C(t)`.
    pub fn eval(&self, t: &DVector<f64>) -> Result<f64> {
        self.check_dim(t)?;
        let r = (t.transpose() * &self.m * t)[(0, 0)];
        Ok(match self.family {
            KernelFamily::SquaredExponential => (-0.5 * r).exp(),
            KernelFamily::RationalQuadratic { alpha } => (1.0 + r / (2.0 * alpha)).powf(-alpha),
        })
    }

    /// Gradient of `C` at `t`.
    pub fn grad(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(t)?;
        let mt = &self.m * t;
        let r = t.dot(&mt);
        Ok(match self.family {
            KernelFamily::SquaredExponential => -mt * (-0.5 * r).exp(),
            KernelFamily::RationalQuadratic { alpha } => {
                let q = 1.0 + r / (2.0 * alpha);
                -mt * q.powf(-alpha - 1.0)
            }
        })
    }

    /// Hessian of `C` at `t`.
    pub fn hess(&self, t: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(t)?;
        let mt = &self.m * t;
        let r = t.dot(&mt);
        let outer = &mt * mt.transpose();
        Ok(match self.family {
            KernelFamily::SquaredExponential => {
                let c = (-0.5 * r).exp();
                (outer - &self.m) * c
            }
            KernelFamily::RationalQuadratic { alpha } => {
                let q = 1.0 + r / (2.0 * alpha);
                outer * ((alpha + 1.0) / alpha * q.powf(-alpha - 2.0))
                    - &self.m * q.powf(-alpha - 1.0)
            }
        })
    }

    /// Hessian of `C` at the origin, `-L^T L`, in closed form.
    pub fn hessian_at_zero(&self) -> DMatrix<f64> {
        -self.m.clone()
    }

    /// Fourth derivative of `C` at the origin.
    ///
    /// For both families the quartic Taylor term is proportional to
    /// `(t^T M t)^2`, so the tensor has the Gaussian product structure
    /// `coeff * (M_ij M_kl + M_ik M_jl + M_il M_jk)`.
    pub fn fourth_derivative_at_zero(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let m = &self.m;
        self.family.quartic_coeff() * (m[(i, j)] * m[(k, l)] + m[(i, k)] * m[(j, l)] + m[(i, l)] * m[(j, k)])
    }

    /// Max-norm deviation of the Hessian at 0 from `-I`.
    pub fn standardization_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((self.m[(i, j)] - target).abs());
            }
        }
        dev
    }

    pub fn is_standardized(&self) -> bool {
        self.standardization_deviation() <= STANDARDIZATION_TOL
    }

    fn require_standardized(&self) -> Result<()> {
        let dev = self.standardization_deviation();
        if dev > STANDARDIZATION_TOL {
            return Err(GrfError::NotStandardized { max_deviation: dev });
        }
        Ok(())
    }
}

/// Number of distinct second-derivative components in dimension `d`.
pub fn sym_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of the pair `(i, j)`, `i <= j`, in the diagonal-first flattening.
pub fn pair_index(i: usize, j: usize, d: usize) -> usize {
    assert!(i <= j && j < d);
    if i == j {
        i
    } else {
        // offset of (i, j), i < j, within the strictly-upper block
        d + (i * (2 * d - i - 1)) / 2 + (j - i - 1)
    }
}

/// Flattens a symmetric matrix to the diagonal-first vector order.
pub fn sym_to_vec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut v = DVector::zeros(sym_len(d));
    for i in 0..d {
        v[i] = m[(i, i)];
    }
    for i in 0..d {
        for j in (i + 1)..d {
            v[pair_index(i, j, d)] = m[(i, j)];
        }
    }
    v
}

/// Inverse of [`sym_to_vec`].
pub fn vec_to_sym(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), sym_len(d));
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = v[i];
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let x = v[pair_index(i, j, d)];
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}

/// Spectral moments of a standardized model: everything the tail constants
/// need from the covariance at the origin.
#[derive(Debug, Clone)]
pub struct SpectralMoments {
    /// Cov(f(0), d2 f(0)); under standardization the first `d` entries are
    /// -1 and the rest 0.
    pub mu20: DVector<f64>,
    /// Cov(d2 f(0), d2 f(0)), symmetric positive definite.
    pub mu22: DMatrix<f64>,
    /// Pure fourth derivatives d4 C / dt_i^4 at 0.
    pub quartic_diag: DVector<f64>,
    /// Joint covariance of (f(0), d2 f(0)): [[1, mu20], [mu20^T, mu22]].
    pub gamma: DMatrix<f64>,
    /// Hessian of C at 0 (equals -I after the standardization check).
    pub hessian_at_zero: DMatrix<f64>,
    /// `d` ones followed by `d(d-1)/2` zeros; pairs with the flattening
    /// order, it is not a vector of all ones.
    pub one_vector: DVector<f64>,
    pub dim: usize,
}

impl SpectralMoments {
    /// `det(Gamma)`, via the Schur complement `det(mu22) * (1 - mu20 mu22^-1 mu02)`.
    pub fn gamma_det(&self) -> Result<f64> {
        let s2 = self.schur_complement()?;
        let chol = nalgebra::Cholesky::new(self.mu22.clone())
            .ok_or_else(|| GrfError::InvalidMoments("mu22 is not positive definite".into()))?;
        Ok(chol.determinant() * s2)
    }

    /// `1 - mu20 mu22^-1 mu02`; must be positive for Gamma to be positive
    /// definite.
    pub fn schur_complement(&self) -> Result<f64> {
        let chol = nalgebra::Cholesky::new(self.mu22.clone())
            .ok_or_else(|| GrfError::InvalidMoments("mu22 is not positive definite".into()))?;
        let solved = chol.solve(&self.mu20);
        Ok(1.0 - self.mu20.dot(&solved))
    }
}

/// Extracts the spectral moments of a standardized model.
///
/// Errors with [`GrfError::NotStandardized`] when the Hessian of `C` at 0
/// deviates from `-I` by more than 1e-10 in max norm.
pub fn spectral_moments(model: &CovarianceModel) -> Result<SpectralMoments> {
    model.require_standardized()?;
    let d = model.dim();
    let q = sym_len(d);

    let hess0 = model.hessian_at_zero();
    let mu20 = sym_to_vec(&hess0);

    let mut mu22 = DMatrix::zeros(q, q);
    let pairs: Vec<(usize, usize)> = (0..d)
        .map(|i| (i, i))
        .chain((0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))))
        .collect();
    for (a, &(i, j)) in pairs.iter().enumerate() {
        for (b, &(k, l)) in pairs.iter().enumerate() {
            mu22[(a, b)] = model.fourth_derivative_at_zero(i, j, k, l);
        }
    }

    let quartic_diag =
        DVector::from_fn(d, |i, _| model.fourth_derivative_at_zero(i, i, i, i));

    let mut gamma = DMatrix::zeros(1 + q, 1 + q);
    gamma[(0, 0)] = 1.0;
    for a in 0..q {
        gamma[(0, 1 + a)] = mu20[a];
        gamma[(1 + a, 0)] = mu20[a];
        for b in 0..q {
            gamma[(1 + a, 1 + b)] = mu22[(a, b)];
        }
    }

    let mut one_vector = DVector::zeros(q);
    for i in 0..d {
        one_vector[i] = 1.0;
    }

    let moments = SpectralMoments {
        mu20,
        mu22,
        quartic_diag,
        gamma,
        hessian_at_zero: hess0,
        one_vector,
        dim: d,
    };
    // Gamma must be positive definite for any valid smooth covariance.
    if moments.schur_complement()? <= 0.0 {
        return Err(GrfError::InvalidMoments(
            "Gamma is not positive definite".into(),
        ));
    }
    Ok(moments)
}

/// The affine change of coordinates that standardizes a raw model.
#[derive(Debug, Clone)]
pub struct AffineStandardization {
    /// Symmetric square root of `Sigma = -Hessian(C)(0)`.
    pub sigma_half: DMatrix<f64>,
    /// `det(Sigma)^(-1/2)`; converts measures in standardized coordinates
    /// back to raw-domain measures.
    pub measure_factor: f64,
}

/// Standardizes a raw model: returns the equivalent model with
/// `Hessian(C)(0) = -I` and the coordinate transform that achieves it.
///
/// The raw covariance is recovered as `C_raw(t) = C_std(sigma_half * t)`. A
/// raw exceedance problem with domain measure `mes` and threshold `b` maps to
/// the standardized problem with measure `mes / measure_factor` and threshold
/// `b / measure_factor`.
pub fn standardize(model: &CovarianceModel) -> Result<(CovarianceModel, AffineStandardization)> {
    let d = model.dim();
    let sigma = -model.hessian_at_zero();
    let eig = sigma.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 1e-12) {
        return Err(GrfError::SingularHessian(format!(
            "smallest eigenvalue {min_eig:.3e}"
        )));
    }
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let sigma_half = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
    let measure_factor = 1.0 / eig.eigenvalues.iter().product::<f64>().sqrt();

    // Both families depend on t only through |Lt|^2 = t^T Sigma t, so the
    // standardized kernel is exactly the unit-scale member of the family.
    let std_model = CovarianceModel::standard(model.family(), d)?;
    Ok((
        std_model,
        AffineStandardization {
            sigma_half,
            measure_factor,
        },
    ))
}

/// Joint covariance matrix of `(f(0), d2 f(0), grad f(0), f(t_1), ..., f(t_m))`
/// for a standardized model.
///
/// Blocks follow the moment structure of a homogeneous field: the derivative
/// block is `[[Gamma, 0], [0, I]]`, and the field columns carry `C(t_k)`,
/// the flattened Hessian of `C` at `t_k`, and `-grad C(t_k)`.
pub fn joint_covariance(model: &CovarianceModel, points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    model.require_standardized()?;
    let d = model.dim();
    let q = sym_len(d);
    let moments = spectral_moments(model)?;
    let m = points.len();
    let n = 1 + q + d + m;
    let mut cov = DMatrix::zeros(n, n);

    cov[(0, 0)] = 1.0;
    for a in 0..q {
        cov[(0, 1 + a)] = moments.mu20[a];
        cov[(1 + a, 0)] = moments.mu20[a];
        for b in 0..q {
            cov[(1 + a, 1 + b)] = moments.mu22[(a, b)];
        }
    }
    for i in 0..d {
        cov[(1 + q + i, 1 + q + i)] = 1.0;
    }

    for (k, t) in points.iter().enumerate() {
        let col = 1 + q + d + k;
        let c = model.eval(t)?;
        let mu1 = -model.grad(t)?;
        let mu2 = sym_to_vec(&model.hess(t)?);
        cov[(0, col)] = c;
        cov[(col, 0)] = c;
        for a in 0..q {
            cov[(1 + a, col)] = mu2[a];
            cov[(col, 1 + a)] = mu2[a];
        }
        for i in 0..d {
            cov[(1 + q + i, col)] = mu1[i];
            cov[(col, 1 + q + i)] = mu1[i];
        }
        for (k2, t2) in points.iter().enumerate().take(k + 1) {
            let col2 = 1 + q + d + k2;
            let v = model.eval(&(t - t2))?;
            cov[(col, col2)] = v;
            cov[(col2, col)] = v;
        }
    }
    Ok(cov)
}

/// JSON form of a kernel: `{"family": "sq_exp"|"rat_quad", "d": n,
/// "L": [[..], ..] or flat row-major, "alpha": x (rat_quad only)}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    pub d: usize,
    #[serde(rename = "L")]
    pub scale: ScaleMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Row-major `d x d` scale matrix, either nested rows or a flat array.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleMatrix {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl KernelSpec {
    pub fn to_model(&self) -> Result<CovarianceModel> {
        let d = self.d;
        let flat: Vec<f64> = match &self.scale {
            ScaleMatrix::Flat(v) => v.clone(),
            ScaleMatrix::Nested(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(GrfError::InvalidKernel(format!(
                        "L must be a {d}x{d} matrix"
                    )));
                }
                rows.iter().flatten().cloned().collect()
            }
        };
        if flat.len() != d * d {
            return Err(GrfError::InvalidKernel(format!(
                "L must have {} entries, got {}",
                d * d,
                flat.len()
            )));
        }
        let scale = DMatrix::from_row_slice(d, d, &flat);
        match self.family.as_str() {
            "sq_exp" => CovarianceModel::squared_exponential(d, scale),
            "rat_quad" => {
                let alpha = self.alpha.ok_or_else(|| {
                    GrfError::InvalidKernel("rat_quad requires an alpha field".into())
                })?;
                CovarianceModel::rational_quadratic(d, scale, alpha)
            }
            other => Err(GrfError::InvalidKernel(format!(
                "unknown family '{other}' (expected sq_exp or rat_quad)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_sq_exp(d: usize) -> CovarianceModel {
        CovarianceModel::standard(KernelFamily::SquaredExponential, d).unwrap()
    }

    #[test]
    fn eval_at_zero_is_one() {
        for d in 1..=3 {
            let m = standard_sq_exp(d);
            assert_eq!(m.eval(&DVector::zeros(d)).unwrap(), 1.0);
        }
        let rq = CovarianceModel::standard(
            KernelFamily::RationalQuadratic { alpha: 6.0 },
            2,
        )
        .unwrap();
        assert_eq!(rq.eval(&DVector::zeros(2)).unwrap(), 1.0);
    }

    #[test]
    fn sq_exp_direct_value() {
        let m = standard_sq_exp(1);
        let v = m.eval(&DVector::from_vec(vec![1.0])).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rat_quad_direct_value() {
        // (1 + |t|^2/10)^(-5) at t = (0.3, 0.4); reference digits from
        // 30-digit arithmetic
        let m = CovarianceModel::rational_quadratic(2, DMatrix::identity(2, 2), 5.0).unwrap();
        let v = m.eval(&DVector::from_vec(vec![0.3, 0.4])).unwrap();
        assert!((v - 0.883_854_287_609_517_3).abs() < 1e-15);
    }

    #[test]
    fn eval_is_symmetric_and_bounded() {
        let m = CovarianceModel::rational_quadratic(
            2,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 2.0]),
            7.5,
        )
        .unwrap();
        let t = DVector::from_vec(vec![0.4, -1.1]);
        let a = m.eval(&t).unwrap();
        let b = m.eval(&(-t)).unwrap();
        assert_eq!(a, b);
        assert!(a.abs() <= 1.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = standard_sq_exp(2);
        let err = m.eval(&DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, GrfError::DimensionMismatch { .. }));
    }

    #[test]
    fn rat_quad_alpha_bound_enforced() {
        let err = CovarianceModel::rational_quadratic(2, DMatrix::identity(2, 2), 4.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d/2 + 3"), "message should name the bound: {msg}");
    }

    #[test]
    fn vectorization_round_trip() {
        // flatten/unflatten is the identity on symmetric matrices
        for d in 1..=4 {
            let mut m = DMatrix::from_fn(d, d, |i, j| (i * 7 + j * 3) as f64);
            m = (&m + m.transpose()) * 0.5;
            let v = sym_to_vec(&m);
            assert_eq!(v.len(), sym_len(d));
            assert_eq!(vec_to_sym(&v, d), m);
        }
    }

    #[test]
    fn moments_d1_sq_exp() {
        let m = standard_sq_exp(1);
        let sm = spectral_moments(&m).unwrap();
        assert!((sm.mu20[0] + 1.0).abs() < 1e-12);
        assert!((sm.mu22[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((sm.quartic_diag[0] - 3.0).abs() < 1e-12);
        assert!((sm.gamma_det().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn moments_d2_sq_exp_block_structure() {
        let m = standard_sq_exp(2);
        let sm = spectral_moments(&m).unwrap();
        assert_eq!(sm.mu20.as_slice(), &[-1.0, -1.0, 0.0]);
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[3.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(sm.mu22, expect);
        assert_eq!(sm.one_vector.as_slice(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn moments_require_standardized_model() {
        let raw =
            CovarianceModel::squared_exponential(1, DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!(matches!(
            spectral_moments(&raw),
            Err(GrfError::NotStandardized { .. })
        ));
    }

    #[test]
    fn hessian_is_minus_identity_when_standardized() {
        for d in 1..=3 {
            let sm = spectral_moments(&standard_sq_exp(d)).unwrap();
            assert_eq!(sm.hessian_at_zero, -DMatrix::<f64>::identity(d, d));
        }
    }

    #[test]
    fn standardize_identity_is_noop() {
        let (std_model, tf) = standardize(&standard_sq_exp(2)).unwrap();
        assert!(std_model.is_standardized());
        assert!((tf.measure_factor - 1.0).abs() < 1e-14);
        assert!((&tf.sigma_half - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn standardize_d1_scale_two() {
        // C(t) = exp(-2 t^2): Sigma = 4, sqrt = 2, measure factor 1/2
        let raw =
            CovarianceModel::squared_exponential(1, DMatrix::from_element(1, 1, 2.0)).unwrap();
        let (std_model, tf) = standardize(&raw).unwrap();
        assert!((tf.sigma_half[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((tf.measure_factor - 0.5).abs() < 1e-12);
        // composing the standardized kernel with sigma_half reproduces the raw one
        for &t in &[0.1, 0.7, -1.3] {
            let raw_v = raw.eval(&DVector::from_vec(vec![t])).unwrap();
            let std_v = std_model
                .eval(&(&tf.sigma_half * DVector::from_vec(vec![t])))
                .unwrap();
            assert!((raw_v - std_v).abs() < 1e-14);
        }
    }

    #[test]
    fn standardize_d2_diagonal() {
        let raw = CovarianceModel::squared_exponential(
            2,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let (_, tf) = standardize(&raw).unwrap();
        assert!((tf.sigma_half[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((tf.sigma_half[(1, 1)] - 3.0).abs() < 1e-12);
        assert!((tf.measure_factor - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_is_idempotent() {
        let raw = CovarianceModel::rational_quadratic(
            2,
            DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.0, 0.8]),
            8.0,
        )
        .unwrap();
        let (std1, _) = standardize(&raw).unwrap();
        let (std2, tf2) = standardize(&std1).unwrap();
        assert!((tf2.measure_factor - 1.0).abs() < 1e-12);
        assert!((&tf2.sigma_half - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
        assert!(std2.is_standardized());
    }

    #[test]
    fn joint_covariance_empty_points_is_block_diagonal() {
        let m = standard_sq_exp(2);
        let sm = spectral_moments(&m).unwrap();
        let cov = joint_covariance(&m, &[]).unwrap();
        let (q, d) = (sym_len(2), 2);
        assert_eq!(cov.nrows(), 1 + q + d);
        for a in 0..(1 + q) {
            for b in 0..(1 + q) {
                assert_eq!(cov[(a, b)], sm.gamma[(a, b)]);
            }
        }
        for i in 0..d {
            for b in 0..(1 + q) {
                assert_eq!(cov[(1 + q + i, b)], 0.0);
            }
            assert_eq!(cov[(1 + q + i, 1 + q + i)], 1.0);
        }
    }

    #[test]
    fn joint_covariance_is_psd() {
        let m = standard_sq_exp(2);
        let pts = vec![
            DVector::from_vec(vec![0.3, 0.1]),
            DVector::from_vec(vec![-0.5, 0.9]),
        ];
        let cov = joint_covariance(&m, &pts).unwrap();
        let eig = cov.symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-8);
    }

    #[test]
    fn kernel_spec_round_trips() {
        let spec: KernelSpec = serde_json::from_str(
            r#"{"family":"rat_quad","d":2,"L":[[1.0,0.0],[0.0,1.0]],"alpha":6.5}"#,
        )
        .unwrap();
        let model = spec.to_model().unwrap();
        assert_eq!(model.dim(), 2);
        let flat: KernelSpec =
            serde_json::from_str(r#"{"family":"sq_exp","d":2,"L":[1.0,0.0,0.0,1.0]}"#).unwrap();
        assert!(flat.to_model().unwrap().is_standardized());
        let bad: KernelSpec =
            serde_json::from_str(r#"{"family":"sq_exp","d":2,"L":[1.0,0.0,0.0]}"#).unwrap();
        assert!(bad.to_model().is_err());
    }
}
