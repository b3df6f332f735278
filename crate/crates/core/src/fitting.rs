//! Discretized cost evaluation and the lower-level fitting problem:
//! per-region weighted affine least squares, optionally glued continuously
//! across adjacent regions.
//!
//! The cost of a candidate PWA function is the sample mean of
//! `‖F(x) − f(x)‖² / (‖F(x)‖² + 1)` over a fixed low-discrepancy point set;
//! folding the denominator into per-sample weights makes the least-squares
//! optimum coincide with that objective exactly. Continuity couples the
//! modes of regions sharing a facet on hyperplane `i` through a hinge
//! vector `c`: `J_p − J_q = c hᵢᵀ` and `K_p − K_q = −c`, making the two
//! modes agree everywhere on `hᵢᵀx = 1`. With the partition fixed both
//! problems are plain (equality-constrained) linear least squares, solved
//! through normal equations and the KKT system; no iterative solver is
//! involved, so results are exact and deterministic.

use crate::geometry::{Domain, Hyperplane};
use crate::partition::AdjacencyMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ridge weight keeping under-sampled region blocks solvable.
pub const RIDGE: f64 = 1e-8;

/// First 16 primes, Halton bases per axis.
const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Fixed, seeded point cloud over the working-frame box with the function
/// values at those points. `assignment` maps each sample to a region index
/// and is refilled for every candidate arrangement.
#[derive(Debug, Clone)]
pub struct SampleSet {
    /// N×d, working frame.
    pub points: DMatrix<f64>,
    /// N×n function values.
    pub values: DMatrix<f64>,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.values.ncols()
    }

    /// Per-sample weight `1 / (‖F(x)‖² + 1)`.
    pub fn weight(&self, k: usize) -> f64 {
        1.0 / (self.values.row(k).norm_squared() + 1.0)
    }
}

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = f64::from(base);
    let mut fac = 1.0 / b;
    let mut r = 0.0;
    while index > 0 {
        r += fac * (index % u64::from(base)) as f64;
        index /= u64::from(base);
        fac /= b;
    }
    r
}

/// Draws `n` points from a seeded Halton sequence (Cranley–Patterson
/// rotated so different seeds give different but equally uniform clouds),
/// scaled to the working-frame box. Values are left empty for the caller's
/// evaluator to fill.
pub fn sample_domain(domain: &Domain, n: usize, seed: u64) -> SampleSet {
    assert!(n >= 1, "need at least one sample");
    let d = domain.dim();
    assert!(d <= PRIMES.len(), "sampling supports up to {} axes", PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let half = domain.half_width();
    let points = DMatrix::from_fn(n, d, |k, j| {
        let u = (radical_inverse(k as u64 + 1, PRIMES[j]) + shift[j]).fract();
        -half[j] + 2.0 * half[j] * u
    });
    SampleSet {
        points,
        values: DMatrix::zeros(n, 0),
        seed,
        assignment: vec![0; n],
    }
}

/// One affine mode `f_p(x) = J x + K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMode {
    /// n×d Jacobian.
    pub jac: DMatrix<f64>,
    /// n-vector offset.
    pub offset: DVector<f64>,
}

impl AffineMode {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jac * x + &self.offset
    }
}

/// Outcome of a lower-level fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub modes: Vec<AffineMode>,
    /// Discretized relative squared-error cost (sample mean).
    pub gamma: f64,
    /// Largest per-sample relative error.
    pub max_rel_err: f64,
    /// Hinge vectors per adjacent pair `(p, q, c)`, present after a
    /// continuity-constrained fit.
    pub boundary_couplings: Vec<(usize, usize, DVector<f64>)>,
    /// Regions with fewer than `d+1` samples, fitted through the ridge only.
    pub undersampled: Vec<bool>,
}

impl FitResult {
    pub fn undersampled_fraction(&self) -> f64 {
        if self.modes.is_empty() {
            return 0.0;
        }
        self.undersampled.iter().filter(|&&b| b).count() as f64 / self.modes.len() as f64
    }
}

/// Evaluates the discretized cost of a mode list against the samples:
/// `gamma` is the mean of `‖F − f‖²/(‖F‖²+1)`, `max_rel_err` the largest
/// `‖F − f‖/√(‖F‖²+1)`.
pub fn cost(samples: &SampleSet, modes: &[AffineMode], assignment: &[usize]) -> (f64, f64) {
    let n = samples.len();
    let mut sum = 0.0;
    let mut worst = 0.0f64;
    for k in 0..n {
        let x = samples.points.row(k).transpose();
        let f = modes[assignment[k]].eval(&x);
        let err2 = (samples.values.row(k).transpose() - f).norm_squared();
        let rel2 = err2 * samples.weight(k);
        sum += rel2;
        worst = worst.max(rel2);
    }
    (sum / n as f64, worst.sqrt())
}

/// Accumulated normal-equation blocks per region: `M_p = Σ w z zᵀ`,
/// `B_p = Σ w z Fᵀ` with `z = [x; 1]`, plus sample counts.
struct NormalBlocks {
    m: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    counts: Vec<usize>,
}

fn accumulate_blocks(samples: &SampleSet, assignment: &[usize], p_count: usize) -> NormalBlocks {
    let d = samples.dim();
    let n_out = samples.out_dim();
    let mut m = vec![DMatrix::zeros(d + 1, d + 1); p_count];
    let mut b = vec![DMatrix::zeros(d + 1, n_out); p_count];
    let mut counts = vec![0usize; p_count];
    let mut z = DVector::zeros(d + 1);
    for k in 0..samples.len() {
        let p = assignment[k];
        let w = samples.weight(k);
        for j in 0..d {
            z[j] = samples.points[(k, j)];
        }
        z[d] = 1.0;
        // fixed sample order keeps the accumulation bit-reproducible
        m[p].ger(w, &z, &z, 1.0);
        for r in 0..n_out {
            let fw = w * samples.values[(k, r)];
            for j in 0..=d {
                b[p][(j, r)] += fw * z[j];
            }
        }
        counts[p] += 1;
    }
    NormalBlocks { m, b, counts }
}

fn modes_from_theta(theta: &[DMatrix<f64>], d: usize) -> Vec<AffineMode> {
    theta
        .iter()
        .map(|t| AffineMode {
            jac: t.rows(0, d).transpose(),
            offset: t.row(d).transpose(),
        })
        .collect()
}

/// Solves the unconstrained lower-level problem: independent weighted
/// affine least squares per region, ridge-stabilized so sliver regions
/// still produce a (flagged) mode.
pub fn fit_unconstrained(samples: &SampleSet, assignment: &[usize], p_count: usize) -> FitResult {
    let d = samples.dim();
    let blocks = accumulate_blocks(samples, assignment, p_count);
    let mut theta = Vec::with_capacity(p_count);
    for p in 0..p_count {
        let mut m = blocks.m[p].clone();
        for j in 0..=d {
            m[(j, j)] += RIDGE;
        }
        let sol = m
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&blocks.b[p]))
            .unwrap_or_else(|| {
                m.full_piv_lu()
                    .solve(&blocks.b[p])
                    .expect("ridge-regularized normal matrix is invertible")
            });
        theta.push(sol);
    }
    let modes = modes_from_theta(&theta, d);
    let undersampled: Vec<bool> = blocks.counts.iter().map(|&c| c < d + 1).collect();
    let (gamma, max_rel_err) = cost(samples, &modes, assignment);
    FitResult {
        modes,
        gamma,
        max_rel_err,
        boundary_couplings: Vec::new(),
        undersampled,
    }
}

/// Solves the continuity-constrained lower-level problem.
///
/// Unknowns per output component: a `(d+1)`-vector per region and one hinge
/// scalar per adjacent pair; every pair `(p, q)` sharing hyperplane `i`
/// contributes the equalities `J_p − J_q = c hᵢᵀ`, `K_p − K_q = −c`. The
/// stacked system is solved through its KKT matrix (output components
/// decouple, so one factorization serves all of them); a singular KKT —
/// redundant constraints — falls back to the SVD least-norm solution.
pub fn fit_continuous(
    samples: &SampleSet,
    assignment: &[usize],
    hyperplanes: &[Hyperplane],
    adjacency: &AdjacencyMatrix,
    p_count: usize,
) -> FitResult {
    let d = samples.dim();
    let n_out = samples.out_dim();
    let edges = adjacency.edges();
    if edges.is_empty() {
        return fit_unconstrained(samples, assignment, p_count);
    }

    let blocks = accumulate_blocks(samples, assignment, p_count);
    let nv = p_count * (d + 1) + edges.len();
    let nc = edges.len() * (d + 1);
    let dim = nv + nc;

    let mut kkt = DMatrix::zeros(dim, dim);
    for p in 0..p_count {
        let off = p * (d + 1);
        kkt.view_mut((off, off), (d + 1, d + 1)).copy_from(&blocks.m[p]);
    }
    for v in 0..nv {
        kkt[(v, v)] += RIDGE;
    }
    let c_base = p_count * (d + 1);
    for (e, &(p, q, i)) in edges.iter().enumerate() {
        let row0 = nv + e * (d + 1);
        let (ip, iq, ic) = (p * (d + 1), q * (d + 1), c_base + e);
        let h = hyperplanes[i].coeffs();
        for j in 0..d {
            kkt[(row0 + j, ip + j)] = 1.0;
            kkt[(row0 + j, iq + j)] = -1.0;
            kkt[(row0 + j, ic)] = -h[j];
        }
        kkt[(row0 + d, ip + d)] = 1.0;
        kkt[(row0 + d, iq + d)] = -1.0;
        kkt[(row0 + d, ic)] = 1.0;
    }
    // symmetric completion: C also acts on the primal block from the right
    for r in nv..dim {
        for c in 0..nv {
            kkt[(c, r)] = kkt[(r, c)];
        }
    }

    let mut rhs = DMatrix::zeros(dim, n_out);
    for p in 0..p_count {
        let off = p * (d + 1);
        rhs.view_mut((off, 0), (d + 1, n_out)).copy_from(&blocks.b[p]);
    }

    // symmetric Jacobi equilibration: sample coordinates of very different
    // magnitudes (anisotropic boxes) otherwise wreck the LU's conditioning
    let scal = DVector::from_fn(dim, |j, _| {
        let m = kkt.row(j).amax();
        if m > 0.0 {
            1.0 / m.sqrt()
        } else {
            1.0
        }
    });
    let mut kkt_s = kkt.clone();
    for r in 0..dim {
        for c in 0..dim {
            kkt_s[(r, c)] *= scal[r] * scal[c];
        }
    }
    let mut rhs_s = rhs.clone();
    for r in 0..dim {
        for c in 0..n_out {
            rhs_s[(r, c)] *= scal[r];
        }
    }

    let lu = kkt_s.clone().lu();
    let unscale = |mut s: DMatrix<f64>| {
        for r in 0..dim {
            for c in 0..n_out {
                s[(r, c)] *= scal[r];
            }
        }
        s
    };
    let sol = match lu.solve(&rhs_s) {
        Some(s) => {
            // accept the fast path only when it actually solved the system
            let resid = (&kkt_s * &s - &rhs_s).norm();
            let scale = (kkt_s.norm() * s.norm()).max(1.0);
            if resid <= 1e-9 * scale {
                unscale(s)
            } else {
                unscale(svd_least_norm(&kkt_s, &rhs_s))
            }
        }
        None => unscale(svd_least_norm(&kkt_s, &rhs_s)),
    };

    let mut theta = Vec::with_capacity(p_count);
    for p in 0..p_count {
        theta.push(sol.view((p * (d + 1), 0), (d + 1, n_out)).into_owned());
    }
    let modes = modes_from_theta(&theta, d);
    let boundary_couplings = edges
        .iter()
        .enumerate()
        .map(|(e, &(p, q, _))| {
            let c = sol.view((c_base + e, 0), (1, n_out)).transpose().into_owned();
            (p, q, DVector::from_column_slice(c.as_slice()))
        })
        .collect();
    let undersampled: Vec<bool> = blocks.counts.iter().map(|&c| c < d + 1).collect();
    let (gamma, max_rel_err) = cost(samples, &modes, assignment);
    FitResult {
        modes,
        gamma,
        max_rel_err,
        boundary_couplings,
        undersampled,
    }
}

fn svd_least_norm(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    svd.solve(rhs, eps).expect("SVD solve with U/V computed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition;
    use approx::assert_relative_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn fill_values<F: Fn(&DVector<f64>) -> DVector<f64>>(s: &mut SampleSet, n_out: usize, f: F) {
        let n = s.len();
        let mut vals = DMatrix::zeros(n, n_out);
        for k in 0..n {
            let v = f(&s.points.row(k).transpose());
            for r in 0..n_out {
                vals[(k, r)] = v[r];
            }
        }
        s.values = vals;
    }

    fn box2() -> Domain {
        Domain::new(dvec(&[-2.0, -2.0]), dvec(&[2.0, 2.0])).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_in_box() {
        let d = box2();
        let a = sample_domain(&d, 1, 42);
        let b = sample_domain(&d, 1, 42);
        assert_eq!(a.points, b.points);
        assert!(a.points[(0, 0)].abs() <= 2.0 && a.points[(0, 1)].abs() <= 2.0);

        let c = sample_domain(&d, 1, 43);
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn sampling_uniformity_and_coverage() {
        let d = box2();
        let s = sample_domain(&d, 5000, 42);
        for j in 0..2 {
            let col = s.points.column(j);
            let mean: f64 = col.iter().sum::<f64>() / 5000.0;
            assert!(mean.abs() < 0.05, "axis {j} mean {mean}");
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((min + 2.0).abs() < 0.02, "axis {j} min {min}");
            assert!((max - 2.0).abs() < 0.02, "axis {j} max {max}");
        }
    }

    #[test]
    fn cost_zero_for_exact_affine_model() {
        let d = box2();
        let mut s = sample_domain(&d, 500, 1);
        let jac = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let offset = dvec(&[0.5]);
        fill_values(&mut s, 1, |x| &jac * x + &offset);
        let (gamma, max_rel) = cost(&s, &[AffineMode { jac, offset }], &s.assignment);
        assert_eq!(gamma, 0.0);
        assert_eq!(max_rel, 0.0);
    }

    #[test]
    fn cost_of_unit_offset_against_zero_function() {
        let d = box2();
        let mut s = sample_domain(&d, 100, 1);
        fill_values(&mut s, 1, |_| dvec(&[0.0]));
        let mode = AffineMode {
            jac: DMatrix::zeros(1, 2),
            offset: dvec(&[1.0]),
        };
        let (gamma, max_rel) = cost(&s, &[mode], &s.assignment);
        assert_relative_eq!(gamma, 1.0);
        assert_relative_eq!(max_rel, 1.0);
    }

    #[test]
    fn cost_matches_quadrature_oracle() {
        // F(x) = x^2 on [-1,1], zero model: gamma -> (1/2)∫ x^4/(x^4+1) dx
        let d = Domain::new(dvec(&[-1.0]), dvec(&[1.0])).unwrap();
        let mut s = sample_domain(&d, 100_000, 7);
        fill_values(&mut s, 1, |x| dvec(&[x[0] * x[0]]));
        let mode = AffineMode {
            jac: DMatrix::zeros(1, 1),
            offset: dvec(&[0.0]),
        };
        let (gamma, _) = cost(&s, &[mode], &s.assignment);
        // midpoint rule, 1e6 cells
        let n = 1_000_000;
        let mut acc = 0.0;
        for i in 0..n {
            let x: f64 = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            acc += x.powi(4) / (x.powi(4) + 1.0);
        }
        let oracle = acc / n as f64;
        assert!((gamma - oracle).abs() < 1e-3, "gamma {gamma} vs oracle {oracle}");
    }

    #[test]
    fn exact_affine_recovery_1d() {
        let d = Domain::new(dvec(&[-3.0]), dvec(&[3.0])).unwrap();
        let mut s = sample_domain(&d, 200, 3);
        fill_values(&mut s, 1, |x| dvec(&[2.0 * x[0] + 1.0]));
        let fit = fit_unconstrained(&s, &s.assignment.clone(), 1);
        assert_relative_eq!(fit.modes[0].jac[(0, 0)], 2.0, epsilon = 1e-9);
        assert_relative_eq!(fit.modes[0].offset[0], 1.0, epsilon = 1e-9);
        assert!(fit.gamma < 1e-18);
    }

    #[test]
    fn constant_function_over_two_regions() {
        let d = box2();
        let mut s = sample_domain(&d, 400, 5);
        fill_values(&mut s, 1, |_| dvec(&[3.5]));
        // split left/right of x1 = 0
        for k in 0..s.len() {
            s.assignment[k] = usize::from(s.points[(k, 0)] >= 0.0);
        }
        let fit = fit_unconstrained(&s, &s.assignment.clone(), 2);
        for p in 0..2 {
            assert_relative_eq!(fit.modes[p].offset[0], 3.5, epsilon = 1e-7);
            assert!(fit.modes[p].jac.norm() < 1e-7);
        }
    }

    #[test]
    fn unconstrained_matches_svd_design_matrix_oracle() {
        // independent route: weighted stacked design matrix solved by SVD
        let d = Domain::new(dvec(&[-1.0]), dvec(&[1.0])).unwrap();
        let mut s = sample_domain(&d, 2000, 11);
        fill_values(&mut s, 1, |x| dvec(&[x[0] * x[0]]));
        let fit = fit_unconstrained(&s, &s.assignment.clone(), 1);

        let n = s.len();
        let mut a = DMatrix::zeros(n, 2);
        let mut b = DVector::zeros(n);
        for k in 0..n {
            let sw = s.weight(k).sqrt();
            a[(k, 0)] = sw * s.points[(k, 0)];
            a[(k, 1)] = sw;
            b[k] = sw * s.values[(k, 0)];
        }
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        assert_relative_eq!(fit.modes[0].jac[(0, 0)], sol[0], epsilon = 1e-8);
        assert_relative_eq!(fit.modes[0].offset[0], sol[1], epsilon = 1e-8);
    }

    /// |x1 - 1| split by the cut {x1 = 1} is an exactly representable
    /// continuous PWA target.
    #[test]
    fn continuity_recovers_exact_hinge() {
        let dom = box2();
        let cuts = vec![Hyperplane::new(dvec(&[1.0, 0.0]))];
        let sig = partition::chambers(&cuts, &dom, 20).unwrap();
        let (_, adj, p_count) = partition::regions(&sig);
        assert_eq!(p_count, 2);

        let mut s = sample_domain(&dom, 2000, 13);
        fill_values(&mut s, 1, |x| dvec(&[(x[0] - 1.0).abs()]));
        for k in 0..s.len() {
            s.assignment[k] =
                partition::locate_chamber(&cuts, &sig, &s.points.row(k).transpose());
        }
        let fit = fit_continuous(&s, &s.assignment.clone(), &cuts, &adj, p_count);
        // region 0: x1 < 1 -> J = -1, K = 1; region 1: x1 >= 1 -> J = 1, K = -1
        assert_relative_eq!(fit.modes[0].jac[(0, 0)], -1.0, epsilon = 1e-7);
        assert_relative_eq!(fit.modes[0].offset[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(fit.modes[1].jac[(0, 0)], 1.0, epsilon = 1e-7);
        assert_relative_eq!(fit.modes[1].offset[0], -1.0, epsilon = 1e-7);
        assert!(fit.gamma < 1e-12);
        // hinge vector c = J_0 - J_1 over h = (-2); K_0 - K_1 = 2 = -c
        assert_eq!(fit.boundary_couplings.len(), 1);
        let (p, q, c) = &fit.boundary_couplings[0];
        assert_eq!((*p, *q), (0, 1));
        assert_relative_eq!(c[0], -2.0, epsilon = 1e-7);
    }

    #[test]
    fn affine_target_fits_continuously_with_zero_hinges() {
        let dom = box2();
        let cuts = vec![
            Hyperplane::new(dvec(&[1.0, 0.2])),
            Hyperplane::new(dvec(&[-0.5, 1.0])),
        ];
        let sig = partition::chambers(&cuts, &dom, 20).unwrap();
        let (_, adj, p_count) = partition::regions(&sig);
        let mut s = sample_domain(&dom, 3000, 17);
        fill_values(&mut s, 1, |x| dvec(&[1.5 * x[0] - 0.7 * x[1] + 0.2]));
        for k in 0..s.len() {
            s.assignment[k] =
                partition::locate_chamber(&cuts, &sig, &s.points.row(k).transpose());
        }
        let fit = fit_continuous(&s, &s.assignment.clone(), &cuts, &adj, p_count);
        assert!(fit.gamma < 1e-14, "gamma {}", fit.gamma);
        for (_, _, c) in &fit.boundary_couplings {
            assert!(c.norm() < 1e-6, "hinge magnitude {}", c.norm());
        }
        for m in &fit.modes {
            assert_relative_eq!(m.jac[(0, 0)], 1.5, epsilon = 1e-6);
            assert_relative_eq!(m.jac[(0, 1)], -0.7, epsilon = 1e-6);
            assert_relative_eq!(m.offset[0], 0.2, epsilon = 1e-6);
        }
    }

    #[test]
    fn continuity_residuals_hold_on_irregular_arrangement() {
        let dom = box2();
        let cuts = vec![
            Hyperplane::new(dvec(&[0.9, 0.3])),
            Hyperplane::new(dvec(&[-0.4, 0.8])),
            Hyperplane::new(dvec(&[0.2, -0.9])),
        ];
        let sig = partition::chambers(&cuts, &dom, 20).unwrap();
        let (_, adj, p_count) = partition::regions(&sig);
        let mut s = sample_domain(&dom, 4000, 19);
        fill_values(&mut s, 1, |x| dvec(&[(x[0] + x[1] * x[1]).sin()]));
        for k in 0..s.len() {
            s.assignment[k] =
                partition::locate_chamber(&cuts, &sig, &s.points.row(k).transpose());
        }
        let ufit = fit_unconstrained(&s, &s.assignment.clone(), p_count);
        let cfit = fit_continuous(&s, &s.assignment.clone(), &cuts, &adj, p_count);
        assert!(
            ufit.gamma <= cfit.gamma + 1e-9,
            "constraints cannot improve the optimum: {} vs {}",
            ufit.gamma,
            cfit.gamma
        );
        for &(p, q, ref c) in &cfit.boundary_couplings {
            let i = (adj.entry(p, q) - 1) as usize;
            let jdiff = &cfit.modes[p].jac - &cfit.modes[q].jac;
            let hinge = c * cuts[i].coeffs().transpose();
            assert!((&jdiff - &hinge).norm() <= 1e-8, "J residual");
            let kdiff = &cfit.modes[p].offset - &cfit.modes[q].offset;
            assert!((kdiff + c).norm() <= 1e-8, "K residual");
            if c.norm() > 1e-6 {
                let svals = jdiff.svd(false, false).singular_values;
                if svals.len() > 1 {
                    assert!(svals[1] <= 1e-8 * svals[0], "rank-1 violated");
                }
            }
        }
    }

    #[test]
    fn fitted_max_never_exceeds_zero_model() {
        let dom = box2();
        let mut s = sample_domain(&dom, 1500, 23);
        fill_values(&mut s, 1, |x| dvec(&[(2.0 * x[0]).cos() + 0.3 * x[1]]));
        let fit = fit_unconstrained(&s, &s.assignment.clone(), 1);
        let mean =
            s.values.column(0).iter().sum::<f64>() / s.len() as f64;
        let zero = AffineMode {
            jac: DMatrix::zeros(1, 2),
            offset: dvec(&[mean]),
        };
        let (_, max_zero) = cost(&s, &[zero], &s.assignment);
        assert!(fit.max_rel_err <= max_zero + 1e-12);
    }

    #[test]
    fn undersampled_region_is_flagged() {
        let dom = box2();
        let mut s = sample_domain(&dom, 50, 29);
        fill_values(&mut s, 1, |x| dvec(&[x[0]]));
        // region 1 gets a single sample
        for k in 0..s.len() {
            s.assignment[k] = usize::from(k == 0);
        }
        let fit = fit_unconstrained(&s, &s.assignment.clone(), 2);
        assert!(!fit.undersampled[0]);
        assert!(fit.undersampled[1]);
    }
}
