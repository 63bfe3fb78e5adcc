//! Panel covers of box domains.
//!
//! The domain is tiled by congruent cubes of side `2 eps`,
//! `eps = kappa u^(delta - 1/2)`, on the integer lattice `Xi_(eps,k) =
//! 2 k eps + Xi_eps`. The inner cover `C-` keeps the panels whose closure
//! lies inside the domain, the outer cover `C+` keeps those whose interior
//! meets it, and the two panel-count measures sandwich the domain measure.
//!
//! The lattice is anchored so the domain's lower corner coincides with a
//! panel corner. The field being homogeneous, this is only a translation of
//! coordinates; it makes exact tilings (domain side an integer multiple of
//! `2 eps`) classify exactly. Membership tests use a relative slack of
//! `1e-9 eps` so that panel faces which coincide with a domain face up to
//! floating-point rounding land on the intended side.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{constant_h, solve_u};
use crate::error::{GrfError, Result};
use crate::kernel::{spectral_moments, CovarianceModel};

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(GrfError::EmptyDomain);
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(GrfError::EmptyDomain);
        }
        Ok(BoxRegion { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    fn interior_intersects(&self, other: &BoxRegion, tol: f64) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((a, b), (l, h))| *a < h - tol && *b > l + tol)
    }

    /// Subtracts `other` from `self`, pushing the (up to 2d) residual boxes.
    fn subtract_into(&self, other: &BoxRegion, out: &mut Vec<BoxRegion>, tol: f64) {
        if !self.interior_intersects(other, tol) {
            out.push(self.clone());
            return;
        }
        let mut core = self.clone();
        for a in 0..self.dim() {
            if other.lo[a] > core.lo[a] + tol {
                let mut piece = core.clone();
                piece.hi[a] = other.lo[a];
                out.push(piece);
                core.lo[a] = other.lo[a];
            }
            if other.hi[a] < core.hi[a] - tol {
                let mut piece = core.clone();
                piece.lo[a] = other.hi[a];
                out.push(piece);
                core.hi[a] = other.hi[a];
            }
        }
        // what remains of `core` is inside `other` and is dropped
    }
}

/// Finite union of axis-aligned boxes with pairwise disjoint interiors.
#[derive(Debug, Clone)]
pub struct Domain {
    boxes: Vec<BoxRegion>,
}

impl Domain {
    pub fn new(boxes: Vec<BoxRegion>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(GrfError::EmptyDomain);
        }
        let d = boxes[0].dim();
        if boxes.iter().any(|b| b.dim() != d) {
            return Err(GrfError::InvalidParameter(
                "all domain boxes must share one dimension".into(),
            ));
        }
        for i in 0..boxes.len() {
            for j in (i + 1)..boxes.len() {
                if boxes[i].interior_intersects(&boxes[j], 0.0) {
                    return Err(GrfError::InvalidParameter(format!(
                        "domain boxes {i} and {j} have overlapping interiors"
                    )));
                }
            }
        }
        Ok(Domain { boxes })
    }

    pub fn single(bx: BoxRegion) -> Self {
        Domain { boxes: vec![bx] }
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn boxes(&self) -> &[BoxRegion] {
        &self.boxes
    }

    /// Lebesgue measure; exact for interior-disjoint boxes.
    pub fn measure(&self) -> f64 {
        self.boxes.iter().map(BoxRegion::volume).sum()
    }

    /// Componentwise lower corner over all boxes; the cover anchor.
    pub fn lower_corner(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|a| {
                self.boxes
                    .iter()
                    .map(|b| b.lo[a])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn upper_corner(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|a| {
                self.boxes
                    .iter()
                    .map(|b| b.hi[a])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Whether the closed box is covered by the domain (up to `tol`).
    fn covers(&self, bx: &BoxRegion, tol: f64) -> bool {
        let mut residual = vec![bx.clone()];
        for dom_box in &self.boxes {
            let mut inflated = dom_box.clone();
            for a in 0..bx.dim() {
                inflated.lo[a] -= tol;
                inflated.hi[a] += tol;
            }
            let mut next = Vec::new();
            for piece in &residual {
                piece.subtract_into(&inflated, &mut next, tol);
            }
            residual = next;
            if residual.is_empty() {
                return true;
            }
        }
        false
    }

    /// Whether the open box meets the domain (up to `tol`).
    fn meets(&self, bx: &BoxRegion, tol: f64) -> bool {
        self.boxes.iter().any(|b| bx.interior_intersects(b, tol))
    }
}

/// JSON form of a domain: a single box as a list of `[lo, hi]` pairs per
/// axis, or a list of such boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Single(Vec<[f64; 2]>),
    Union(Vec<Vec<[f64; 2]>>),
}

impl DomainSpec {
    pub fn to_domain(&self) -> Result<Domain> {
        let build = |axes: &Vec<[f64; 2]>| -> Result<BoxRegion> {
            BoxRegion::new(
                axes.iter().map(|p| p[0]).collect(),
                axes.iter().map(|p| p[1]).collect(),
            )
        };
        match self {
            DomainSpec::Single(axes) => Ok(Domain::single(build(axes)?)),
            DomainSpec::Union(list) => {
                let boxes: Result<Vec<_>> = list.iter().map(build).collect();
                Domain::new(boxes?)
            }
        }
    }
}

/// Inner and outer panel covers of a domain at panel half-width `eps`.
#[derive(Debug, Clone)]
pub struct PanelCover {
    pub epsilon: f64,
    pub kappa: f64,
    pub delta: f64,
    /// Lattice indices whose closed panel lies inside the domain.
    pub inner_indices: Vec<Vec<i64>>,
    /// Lattice indices whose open panel meets the domain.
    pub outer_indices: Vec<Vec<i64>>,
    pub domain: Domain,
    anchor: Vec<f64>,
}

/// Which of the two covers to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverSide {
    Inner,
    Outer,
}

impl PanelCover {
    /// The closed panel box for lattice index `k`.
    pub fn panel_region(&self, k: &[i64]) -> BoxRegion {
        let lo = self
            .anchor
            .iter()
            .zip(k)
            .map(|(a, &ki)| a + 2.0 * self.epsilon * ki as f64)
            .collect();
        let hi = self
            .anchor
            .iter()
            .zip(k)
            .map(|(a, &ki)| a + 2.0 * self.epsilon * (ki as f64 + 1.0))
            .collect();
        BoxRegion { lo, hi }
    }

    pub fn indices(&self, side: CoverSide) -> &[Vec<i64>] {
        match side {
            CoverSide::Inner => &self.inner_indices,
            CoverSide::Outer => &self.outer_indices,
        }
    }

    /// Total measure of the chosen cover, `count * (2 eps)^d`.
    pub fn cover_measure(&self, side: CoverSide) -> f64 {
        let d = self.domain.dim();
        self.indices(side).len() as f64 * (2.0 * self.epsilon).powi(d as i32)
    }

    /// Bounding box of the chosen cover; errors unless the panel set tiles
    /// it completely (the index set is a full product range).
    pub fn union_region(&self, side: CoverSide) -> Result<BoxRegion> {
        let set = self.indices(side);
        if set.is_empty() {
            return Err(GrfError::EmptyDomain);
        }
        let d = self.domain.dim();
        let mut kmin = set[0].clone();
        let mut kmax = set[0].clone();
        for k in set {
            for a in 0..d {
                kmin[a] = kmin[a].min(k[a]);
                kmax[a] = kmax[a].max(k[a]);
            }
        }
        let expected: i64 = (0..d).map(|a| kmax[a] - kmin[a] + 1).product();
        if expected as usize != set.len() {
            return Err(GrfError::InvalidParameter(
                "panel set is not a contiguous block; no box union exists".into(),
            ));
        }
        let lo = self.panel_region(&kmin).lo;
        let hi = self.panel_region(&kmax).hi;
        Ok(BoxRegion { lo, hi })
    }
}

/// Builds the panel cover of `domain` at threshold level `u`.
pub fn build_cover(domain: &Domain, u: f64, kappa: f64, delta: f64) -> Result<PanelCover> {
    if !(u > 1.0) {
        return Err(GrfError::InvalidParameter(format!(
            "cover level u must exceed 1, got {u}"
        )));
    }
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
    let eps = kappa * u.powf(delta - 0.5);
    let tol = 1e-9 * eps;
    let d = domain.dim();
    let anchor = domain.lower_corner();
    let upper = domain.upper_corner();

    // candidate lattice ranges per axis from the bounding box
    let ranges: Vec<(i64, i64)> = (0..d)
        .map(|a| {
            let span = upper[a] - anchor[a];
            (-1i64, (span / (2.0 * eps)).ceil() as i64 + 1)
        })
        .collect();
    let total: i64 = ranges.iter().map(|(lo, hi)| hi - lo + 1).product();
    if total > 5_000_000 {
        return Err(GrfError::InvalidParameter(format!(
            "cover would enumerate {total} candidate panels; increase delta or kappa"
        )));
    }

    let mut inner = Vec::new();
    let mut outer = Vec::new();
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let cover = PanelCover {
        epsilon: eps,
        kappa,
        delta,
        inner_indices: Vec::new(),
        outer_indices: Vec::new(),
        domain: domain.clone(),
        anchor: anchor.clone(),
    };
    'outer: loop {
        let panel = cover.panel_region(&k);
        if domain.meets(&panel, tol) {
            outer.push(k.clone());
            if domain.covers(&panel, tol) {
                inner.push(k.clone());
            }
        }
        let mut a = 0;
        loop {
            k[a] += 1;
            if k[a] <= ranges[a].1 {
                break;
            }
            k[a] = ranges[a].0;
            a += 1;
            if a == d {
                break 'outer;
            }
        }
    }
    Ok(PanelCover {
        inner_indices: inner,
        outer_indices: outer,
        ..cover
    })
}

/// Sandwich of the domain tail probability by panel sums:
/// `(|C-| * p_panel, |C+| * p_panel)` with `p_panel` the panel-local
/// approximation at the cover's own `eps`.
pub fn sum_panel_approx(
    cover: &PanelCover,
    model: &CovarianceModel,
    sigma: f64,
    b: f64,
) -> Result<(f64, f64)> {
    let d = model.dim();
    if d != cover.domain.dim() {
        return Err(GrfError::DimensionMismatch {
            expected: cover.domain.dim(),
            actual: d,
        });
    }
    let u = solve_u(b, sigma, d)?;
    let moments = spectral_moments(model)?;
    let h = constant_h(&moments, sigma, d)?;
    let log_panel = h.ln()
        + d as f64 * (2.0 * cover.epsilon).ln()
        + (d as f64 - 1.0) * u.ln()
        - 0.5 * u * u;
    let p_panel = log_panel.exp();
    Ok((
        cover.inner_indices.len() as f64 * p_panel,
        cover.outer_indices.len() as f64 * p_panel,
    ))
}
