//! Self-contained phase-1 simplex for deciding feasibility of small linear
//! systems: a box plus a handful of halfspace (or hyperplane) constraints.
//!
//! Chamber feasibility problems have at most `n_c + 2d` rows, so a dense
//! tableau with Bland's rule is plenty and keeps behavior reproducible
//! across platforms. The solver answers "is the system feasible?" and, when
//! it is, returns a feasible point.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("phase-1 simplex did not converge within {0} pivots")]
    NumericalFailure(usize),
}

/// Constraint sense for `coeffs · x (sense) rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// One linear constraint on the working-frame point.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: DVector<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: DVector<f64>, sense: Sense, rhs: f64) -> Self {
        Self { coeffs, sense, rhs }
    }
}

/// Feasibility tolerance on the phase-1 objective (scaled by the constraint
/// magnitudes).
pub const FEASIBILITY_TOL: f64 = 1e-9;

const MAX_PIVOTS: usize = 10_000;

/// Decides whether some `x` with `lower ⩽ x ⩽ upper` satisfies all
/// `constraints`; on success also returns a satisfying point.
///
/// The box lower bounds are substituted away (`y = x − lower ⩾ 0`), upper
/// bounds become explicit `⩽` rows, and a standard phase-1 tableau with
/// slack/artificial columns is pivoted with Bland's rule until the
/// artificial mass is (near) zero or provably positive.
pub fn feasible_point(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    constraints: &[Constraint],
) -> Result<Option<DVector<f64>>, LpError> {
    let d = lower.len();
    // rows: d upper-bound rows, then the caller's constraints
    let n_rows = d + constraints.len();

    // (coeffs over y, sense, rhs) with rhs already shifted by the lower bound
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::with_capacity(n_rows);
    for j in 0..d {
        let mut c = vec![0.0; d];
        c[j] = 1.0;
        rows.push((c, Sense::Le, upper[j] - lower[j]));
    }
    for con in constraints {
        let c: Vec<f64> = con.coeffs.iter().copied().collect();
        let shift: f64 = con.coeffs.dot(lower);
        rows.push((c, con.sense, con.rhs - shift));
    }

    // normalize to nonnegative rhs
    for (c, sense, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            for v in c.iter_mut() {
                *v = -*v;
            }
            *rhs = -*rhs;
            *sense = match *sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }

    // column layout: y (d) | slack/surplus (one per Le/Ge row) | artificial
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let n_cols = d + n_slack + n_art;

    // dense tableau: one row per constraint, plus the phase-1 objective row
    let mut tab = vec![vec![0.0; n_cols + 1]; n_rows];
    let mut basis = vec![usize::MAX; n_rows];
    let mut slack_at = d;
    let mut art_at = d + n_slack;
    let mut art_cols: Vec<usize> = Vec::with_capacity(n_art);

    for (r, (c, sense, rhs)) in rows.iter().enumerate() {
        tab[r][..d].copy_from_slice(c);
        tab[r][n_cols] = *rhs;
        match sense {
            Sense::Le => {
                tab[r][slack_at] = 1.0;
                basis[r] = slack_at;
                slack_at += 1;
            }
            Sense::Ge => {
                tab[r][slack_at] = -1.0;
                slack_at += 1;
                tab[r][art_at] = 1.0;
                basis[r] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
            Sense::Eq => {
                tab[r][art_at] = 1.0;
                basis[r] = art_at;
                art_cols.push(art_at);
                art_at += 1;
            }
        }
    }

    // objective row: minimize the sum of artificials, expressed in terms of
    // nonbasic columns (z row = sum of artificial rows)
    let mut obj = vec![0.0; n_cols + 1];
    for (r, &b) in basis.iter().enumerate() {
        if art_cols.contains(&b) {
            for c in 0..=n_cols {
                obj[c] += tab[r][c];
            }
        }
    }
    for &a in &art_cols {
        obj[a] = 0.0;
    }

    let scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    let tol = FEASIBILITY_TOL * scale;

    let mut pivots = 0;
    loop {
        // Bland: entering = lowest-index column with positive reduced cost
        let Some(enter) = (0..n_cols).find(|&c| obj[c] > tol) else {
            break;
        };
        // ratio test, Bland tie-break by lowest basis index
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..n_rows {
            if tab[r][enter] > 1e-11 {
                let ratio = tab[r][n_cols] / tab[r][enter];
                if ratio < best - 1e-12
                    || (ratio < best + 1e-12 && leave.is_some_and(|l| basis[r] < basis[l]))
                {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(lr) = leave else {
            // unbounded in a feasibility problem means the artificial mass
            // cannot be reduced along this column; should not occur with
            // bounded boxes, treat as numerical failure
            return Err(LpError::NumericalFailure(pivots));
        };

        // pivot
        let pv = tab[lr][enter];
        for c in 0..=n_cols {
            tab[lr][c] /= pv;
        }
        for r in 0..n_rows {
            if r != lr && tab[r][enter].abs() > 0.0 {
                let f = tab[r][enter];
                for c in 0..=n_cols {
                    tab[r][c] -= f * tab[lr][c];
                }
            }
        }
        let f = obj[enter];
        if f.abs() > 0.0 {
            for c in 0..=n_cols {
                obj[c] -= f * tab[lr][c];
            }
        }
        basis[lr] = enter;

        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(LpError::NumericalFailure(pivots));
        }
    }

    // remaining artificial mass = phase-1 objective value
    if obj[n_cols] > tol {
        return Ok(None);
    }

    let mut y = vec![0.0; d];
    for (r, &b) in basis.iter().enumerate() {
        if b < d {
            y[b] = tab[r][n_cols];
        }
    }
    let x = DVector::from_fn(d, |j, _| y[j] + lower[j]);
    Ok(Some(x))
}

/// Feasibility-only variant of [`feasible_point`].
pub fn feasible(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    constraints: &[Constraint],
) -> Result<bool, LpError> {
    feasible_point(lower, upper, constraints).map(|p| p.is_some())
}
