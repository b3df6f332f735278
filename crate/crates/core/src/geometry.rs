//! Box domains, the circumscribed hypersphere, and cutting hyperplanes
//! built from points on the sphere surface.
//!
//! All geometric work happens in the *working frame*, obtained by shifting
//! the box so its center sits at the origin. A cutting hyperplane is the
//! set `{x | hᵀx = 1}`; it is fully determined by the coefficient vector
//! `h` because the offset is pinned at 1. Hyperplanes are generated from
//! `d` points on the circumscribed sphere, each point parameterized by
//! `d−1` spherical angles.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("domain axis {axis}: upper bound {upper} must exceed lower bound {lower}")]
    EmptyAxis { axis: usize, lower: f64, upper: f64 },
    #[error("domain bounds must be finite")]
    NonFiniteBounds,
    #[error("generating points are degenerate (condition number {cond:.3e} > 1e12)")]
    SingularPoints { cond: f64 },
}

/// Axis-aligned box domain. `lower`/`upper` are in the original problem
/// frame; `shift` is the box center, subtracted to enter the working frame
/// where the box is symmetric about the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: DVector<f64>,
    upper: DVector<f64>,
    shift: DVector<f64>,
}

impl Domain {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GeometryError> {
        assert_eq!(lower.len(), upper.len(), "bound dimensions must agree");
        if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteBounds);
        }
        for j in 0..lower.len() {
            if upper[j] <= lower[j] {
                return Err(GeometryError::EmptyAxis {
                    axis: j,
                    lower: lower[j],
                    upper: upper[j],
                });
            }
        }
        let shift = (&lower + &upper) * 0.5;
        Ok(Self { lower, upper, shift })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    /// Per-axis half widths; the working-frame box is `[-half, +half]`.
    pub fn half_width(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    /// Original frame -> working frame.
    pub fn to_working(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.shift
    }

    /// Working frame -> original frame.
    pub fn to_original(&self, x: &DVector<f64>) -> DVector<f64> {
        x + &self.shift
    }

    /// Whether a working-frame point lies in the box, with a per-axis
    /// absolute tolerance of `tol * max(1, half_width)`.
    pub fn contains_working(&self, x: &DVector<f64>, tol: f64) -> bool {
        let half = self.half_width();
        (0..self.dim()).all(|j| x[j].abs() <= half[j] + tol * half[j].max(1.0))
    }
}

/// Circumscribed hypersphere of the working-frame box, centered at the
/// origin. Every box vertex lies on its surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypersphere {
    pub radius: f64,
}

/// Smallest origin-centered sphere enclosing the (centered) box: its radius
/// is half the box diagonal.
pub fn enclosing_hypersphere(domain: &Domain) -> Hypersphere {
    Hypersphere {
        radius: domain.half_width().norm(),
    }
}

/// A cutting hyperplane `{x | hᵀx = 1}` in the working frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    coeffs: DVector<f64>,
}

impl Hyperplane {
    pub fn new(coeffs: DVector<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// hᵀx for a working-frame point.
    pub fn dot(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.dot(x)
    }
}

/// Side indicator: 0 if `hᵀx < 1`, 1 if `hᵀx ⩾ 1` (boundary points take 1).
pub fn sigma_of_point(h: &Hyperplane, x: &DVector<f64>) -> u8 {
    if h.dot(x) >= 1.0 {
        1
    } else {
        0
    }
}

/// Converts spherical coordinates `(ρ, φ₁, …, φ_{d−1})` to the Cartesian
/// point on the sphere surface:
/// `x_j = ρ cos φ_j ∏_{ν<j} sin φ_ν` for `j < d`, `x_d = ρ ∏ sin φ_ν`.
pub fn spherical_to_cartesian(angles: &[f64], radius: f64) -> DVector<f64> {
    let d = angles.len() + 1;
    let mut x = DVector::zeros(d);
    let mut sin_prod = radius;
    for j in 0..d - 1 {
        x[j] = sin_prod * angles[j].cos();
        sin_prod *= angles[j].sin();
    }
    x[d - 1] = sin_prod;
    x
}

/// Inverse of [`spherical_to_cartesian`]: recovers the `d−1` spatial
/// angles of a point on the sphere of radius `rho`. The first `d−2`
/// angles land in `[0, π]`, the last in `[0, 2π]`.
pub fn angles_from_point(p: &DVector<f64>, rho: f64) -> Vec<f64> {
    let d = p.len();
    let mut angles = Vec::with_capacity(d - 1);
    let mut sin_prod = rho;
    for j in 0..d.saturating_sub(2) {
        let c = if sin_prod.abs() > 1e-300 {
            (p[j] / sin_prod).clamp(-1.0, 1.0)
        } else {
            1.0
        };
        let phi = c.acos();
        angles.push(phi);
        sin_prod *= phi.sin();
    }
    if d >= 2 {
        let mut last = p[d - 1].atan2(p[d - 2]);
        if last < 0.0 {
            last += std::f64::consts::TAU;
        }
        angles.push(last);
    }
    angles
}

/// Condition-number cutoff above which a generating-point matrix is
/// considered degenerate.
pub const DEGENERACY_COND_LIMIT: f64 = 1e12;

/// Solves `X h = 1` for the hyperplane through the `d` row-stacked points.
///
/// Fails with [`GeometryError::SingularPoints`] when the points are
/// affinely degenerate or the plane would pass through the origin (both
/// make `X` ill-conditioned). The solve uses a fully pivoted LU, never an
/// explicit inverse.
pub fn hyperplane_from_points(points: &DMatrix<f64>) -> Result<Hyperplane, GeometryError> {
    let d = points.nrows();
    assert_eq!(points.ncols(), d, "need d points in R^d");
    let svd = points.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > DEGENERACY_COND_LIMIT {
        return Err(GeometryError::SingularPoints { cond });
    }
    let rhs = DVector::from_element(d, 1.0);
    let lu = points.clone().full_piv_lu();
    let h = lu
        .solve(&rhs)
        .ok_or(GeometryError::SingularPoints { cond })?;
    Ok(Hyperplane::new(h))
}

/// Spatial angles generating a cut arrangement: `angles[i][k][j]` is angle
/// `φ_j` of point `k` of hyperplane `i`. Angles `φ_1..φ_{d−2}` live in
/// `[0, π]`, the last one in `[0, 2π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGenome {
    pub dim: usize,
    /// Flat layout, index `(i * dim + k) * (dim - 1) + j`.
    pub angles: Vec<f64>,
}

impl AngleGenome {
    pub fn new(n_cuts: usize, dim: usize, angles: Vec<f64>) -> Self {
        assert!(dim >= 2, "cut parameterization needs d >= 2");
        assert_eq!(angles.len(), n_cuts * dim * (dim - 1));
        Self { dim, angles }
    }

    pub fn n_cuts(&self) -> usize {
        self.angles.len() / (self.dim * (self.dim - 1))
    }

    /// Angle slice of point `k` of hyperplane `i`.
    pub fn point_angles(&self, i: usize, k: usize) -> &[f64] {
        let na = self.dim - 1;
        let start = (i * self.dim + k) * na;
        &self.angles[start..start + na]
    }

    /// Upper bound of the `j`-th angle of a point (`j` is 0-based): the
    /// last angle ranges over `[0, 2π]`, all earlier ones over `[0, π]`.
    pub fn angle_upper_bound(dim: usize, j: usize) -> f64 {
        if j == dim - 2 {
            std::f64::consts::TAU
        } else {
            std::f64::consts::PI
        }
    }
}

/// A decoded cut arrangement: one slot per cut, `None` where the
/// generating points were degenerate. The generating genome is kept so the
/// arrangement can be rebuilt or perturbed.
#[derive(Debug, Clone)]
pub struct CutArrangement {
    pub slots: Vec<Option<Hyperplane>>,
    pub genome: AngleGenome,
}

impl CutArrangement {
    pub fn n_cuts(&self) -> usize {
        self.slots.len()
    }

    pub fn degenerate_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_none()).count()
    }

    /// The non-degenerate hyperplanes, in slot order.
    pub fn valid_hyperplanes(&self) -> Vec<Hyperplane> {
        self.slots.iter().flatten().cloned().collect()
    }
}

/// Decodes a genome into its cut arrangement: hyperplane `i` passes through
/// the `d` sphere points decoded from `genome[i][·][·]`. Degenerate point
/// sets are flagged per slot instead of aborting.
pub fn decode_genome(genome: &AngleGenome, sphere: &Hypersphere) -> CutArrangement {
    let d = genome.dim;
    let mut slots = Vec::with_capacity(genome.n_cuts());
    for i in 0..genome.n_cuts() {
        let mut points = DMatrix::zeros(d, d);
        for k in 0..d {
            let p = spherical_to_cartesian(genome.point_angles(i, k), sphere.radius);
            points.set_row(k, &p.transpose());
        }
        slots.push(hyperplane_from_points(&points).ok());
    }
    CutArrangement {
        slots,
        genome: genome.clone(),
    }
}
