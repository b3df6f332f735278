//! Chamber enumeration for a cut arrangement restricted to a box domain,
//! plus the adjacency matrix and minimal halfspace descriptions of each
//! subregion.
//!
//! Chambers are identified by their σ vector (one side bit per cut). The
//! enumeration sweeps the integers `l = 0 … 2^{n_c}−1`, reading σ_i from
//! bit `n_c − i` of `l` (σ₁ is the most significant bit, which reproduces
//! the column order the source material prints), and keeps the σ whose
//! feasibility LP admits a point. Candidates are checked one integer at a
//! time; the candidate matrix is never materialized.

use crate::geometry::{sigma_of_point, Domain, Hyperplane};
use crate::lp::{self, Constraint, Sense};
use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("{n_cuts} cuts exceed the enumeration limit of {limit} (2^n_c chamber sweep)")]
    TooManyCuts { n_cuts: usize, limit: usize },
}

/// Default cap on the number of cuts in a single arrangement.
pub const DEFAULT_CUT_LIMIT: usize = 20;

/// Margin factor realizing strict `hᵀx < 1` as `hᵀx ⩽ 1 − eps·scale`.
pub const STRICT_MARGIN_EPS: f64 = 1e-7;

/// Boolean chamber matrix Σ: column `p` is the σ vector of chamber `p`.
/// Columns are stored as the sweep integer (σ₁ = MSB) in ascending order,
/// so `columns` is sorted and doubles as a lookup key.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityMatrix {
    n_cuts: usize,
    columns: Vec<u64>,
}

impl FeasibilityMatrix {
    /// Columns are expected in ascending sweep order; hand-built invalid
    /// matrices (duplicates, wrong order) are representable on purpose so
    /// validation can detect them.
    pub fn from_columns(n_cuts: usize, columns: Vec<u64>) -> Self {
        Self { n_cuts, columns }
    }

    pub fn n_cuts(&self) -> usize {
        self.n_cuts
    }

    /// Number of chambers `P`.
    pub fn n_chambers(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[u64] {
        &self.columns
    }

    /// σ_i of chamber `p` (`i` is the 0-based hyperplane index).
    pub fn sigma(&self, i: usize, p: usize) -> u8 {
        ((self.columns[p] >> (self.n_cuts - 1 - i)) & 1) as u8
    }

    /// Dense 0/1 rows (n_c × P), the printable form of Σ.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n_cuts)
            .map(|i| (0..self.n_chambers()).map(|p| self.sigma(i, p)).collect())
            .collect()
    }

    /// Packs a point's σ bits into the sweep-integer representation.
    pub fn mask_of_point(hyperplanes: &[Hyperplane], x: &DVector<f64>) -> u64 {
        let n = hyperplanes.len();
        hyperplanes
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, h)| m | (u64::from(sigma_of_point(h, x)) << (n - 1 - i)))
    }
}

/// Adjacency matrix A: `entry(p, q) = i+1` when chambers p and q share
/// hyperplane `i` (0-based) as their boundary, `0` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<u32>,
}

impl AdjacencyMatrix {
    pub fn n_chambers(&self) -> usize {
        self.n
    }

    /// 1-based hyperplane index shared by chambers p and q, 0 if none.
    pub fn entry(&self, p: usize, q: usize) -> u32 {
        self.entries[p * self.n + q]
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.n)
            .map(|p| self.entries[p * self.n..(p + 1) * self.n].to_vec())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n);
            entries.extend_from_slice(r);
        }
        Self { n, entries }
    }

    /// All adjacent pairs `(p, q, i)` with `p < q` and `i` the 0-based
    /// hyperplane index, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for p in 0..self.n {
            for q in p + 1..self.n {
                let e = self.entry(p, q);
                if e > 0 {
                    out.push((p, q, (e - 1) as usize));
                }
            }
        }
        out
    }
}

/// One subregion: the chamber id plus its minimal halfspace description.
/// Only boundary hyperplanes appear; each entry is the 0-based hyperplane
/// index with the chamber's orientation bit (`0`: `hᵀx ⩽ 1`, `1`:
/// `−hᵀx ⩽ −1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    pub halfspaces: Vec<(usize, u8)>,
}

impl Region {
    /// Oriented inequality rows `((−1)^σ h, (−1)^σ)` of this region.
    pub fn oriented_rows(&self, hyperplanes: &[Hyperplane]) -> Vec<(DVector<f64>, f64)> {
        self.halfspaces
            .iter()
            .map(|&(i, s)| {
                let sign = if s == 1 { -1.0 } else { 1.0 };
                (hyperplanes[i].coeffs() * sign, sign)
            })
            .collect()
    }
}

/// Whether the (margin-relaxed) system of halfspaces admits a point in the
/// working-frame box. `eps` scales the strict-side margin.
pub fn lp_feasible(
    hyperplanes: &[Hyperplane],
    mask: u64,
    domain: &Domain,
    eps: f64,
) -> Result<bool, lp::LpError> {
    let half = domain.half_width();
    let rho = half.norm();
    let n = hyperplanes.len();
    let cons: Vec<Constraint> = hyperplanes
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let bit = (mask >> (n - 1 - i)) & 1;
            if bit == 0 {
                let scale = (h.coeffs().norm() * rho).max(1.0);
                Constraint::new(h.coeffs().clone(), Sense::Le, 1.0 - eps * scale)
            } else {
                Constraint::new(h.coeffs().clone(), Sense::Ge, 1.0)
            }
        })
        .collect();
    lp::feasible(&(-&half), &half, &cons)
}

/// Enumerates the nonempty chambers of the arrangement inside the domain.
///
/// Conceptually sweeps `l = 0 … 2^{n_c}−1` in ascending order and keeps
/// the feasible σ patterns. The sweep is organized as a depth-first walk
/// over σ prefixes (σ₁ first): an infeasible prefix rules out all its
/// completions, so whole subtrees of the 2^{n_c} candidates are pruned
/// with a single LP while the emitted column order stays identical to the
/// ascending sweep. Individual LP failures drop the candidate with a
/// warning rather than aborting.
pub fn chambers(
    hyperplanes: &[Hyperplane],
    domain: &Domain,
    limit: usize,
) -> Result<FeasibilityMatrix, PartitionError> {
    let n = hyperplanes.len();
    if n > limit {
        return Err(PartitionError::TooManyCuts { n_cuts: n, limit });
    }
    if n == 0 {
        return Ok(FeasibilityMatrix::from_columns(0, vec![0]));
    }
    let half = domain.half_width();
    let rho = half.norm();
    let lower = -&half;

    // prefix feasibility: only the first `depth` cuts constrained
    let prefix_feasible = |mask: u64, depth: usize| -> bool {
        let cons: Vec<Constraint> = hyperplanes[..depth]
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let bit = (mask >> (depth - 1 - i)) & 1;
                if bit == 0 {
                    let scale = (h.coeffs().norm() * rho).max(1.0);
                    Constraint::new(
                        h.coeffs().clone(),
                        Sense::Le,
                        1.0 - STRICT_MARGIN_EPS * scale,
                    )
                } else {
                    Constraint::new(h.coeffs().clone(), Sense::Ge, 1.0)
                }
            })
            .collect();
        match lp::feasible(&lower, &half, &cons) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("chamber sweep: dropping sigma prefix {mask:#b}/{depth}: {e}");
                false
            }
        }
    };

    let mut columns = Vec::new();
    // 0-branch explored before the 1-branch keeps ascending order
    let mut stack: Vec<(u64, usize)> = vec![(1, 1), (0, 1)];
    while let Some((mask, depth)) = stack.pop() {
        if !prefix_feasible(mask, depth) {
            continue;
        }
        if depth == n {
            columns.push(mask);
        } else {
            stack.push(((mask << 1) | 1, depth + 1));
            stack.push((mask << 1, depth + 1));
        }
    }
    Ok(FeasibilityMatrix::from_columns(n, columns))
}

/// Builds the adjacency matrix: two chambers are adjacent exactly when
/// their σ columns differ in a single bit; the entry records which one.
pub fn adjacency(sigma: &FeasibilityMatrix) -> AdjacencyMatrix {
    let p_count = sigma.n_chambers();
    let n = sigma.n_cuts();
    let mut entries = vec![0u32; p_count * p_count];
    for p in 0..p_count {
        for q in p + 1..p_count {
            let x = sigma.columns()[p] ^ sigma.columns()[q];
            if x.count_ones() == 1 {
                // bit position back to the 1-based hyperplane index
                let i = n - 1 - x.trailing_zeros() as usize;
                entries[p * p_count + q] = (i + 1) as u32;
                entries[q * p_count + p] = (i + 1) as u32;
            }
        }
    }
    AdjacencyMatrix { n: p_count, entries }
}

/// Extracts the minimal halfspace description of every chamber: region `p`
/// keeps exactly the hyperplanes appearing in row `p` of the adjacency
/// matrix, oriented by its σ bits.
pub fn regions(
    sigma: &FeasibilityMatrix,
) -> (Vec<Region>, AdjacencyMatrix, usize) {
    let adj = adjacency(sigma);
    let p_count = sigma.n_chambers();
    let mut out = Vec::with_capacity(p_count);
    for p in 0..p_count {
        let mut bounds: Vec<usize> = (0..p_count)
            .filter_map(|q| match adj.entry(p, q) {
                0 => None,
                i => Some((i - 1) as usize),
            })
            .collect();
        bounds.sort_unstable();
        bounds.dedup();
        let halfspaces = bounds.into_iter().map(|i| (i, sigma.sigma(i, p))).collect();
        out.push(Region { id: p, halfspaces });
    }
    (out, adj, p_count)
}

/// Locates the chamber containing a working-frame point.
///
/// The point's σ vector is matched against the Σ columns; floating-point
/// boundary slivers that match no column resolve to the column at minimal
/// Hamming distance, tie-broken by the lowest index.
pub fn locate_chamber(
    hyperplanes: &[Hyperplane],
    sigma: &FeasibilityMatrix,
    x: &DVector<f64>,
) -> usize {
    let mask = FeasibilityMatrix::mask_of_point(hyperplanes, x);
    match sigma.columns().binary_search(&mask) {
        Ok(p) => p,
        Err(_) => {
            let mut best = 0;
            let mut best_dist = u32::MAX;
            for (p, &c) in sigma.columns().iter().enumerate() {
                let dist = (c ^ mask).count_ones();
                if dist < best_dist {
                    best_dist = dist;
                    best = p;
                }
            }
            best
        }
    }
}

/// JSON shape of the chamber diagnostics export.
#[derive(Debug, Serialize)]
pub struct ChamberDiagnostics {
    pub sigma: Vec<Vec<u8>>,
    pub adjacency: Vec<Vec<u32>>,
    #[serde(rename = "P")]
    pub p_count: usize,
}

impl ChamberDiagnostics {
    pub fn new(sigma: &FeasibilityMatrix, adj: &AdjacencyMatrix) -> Self {
        Self {
            sigma: sigma.to_rows(),
            adjacency: adj.to_rows(),
            p_count: sigma.n_chambers(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DEGENERACY_COND_LIMIT;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn cube3() -> Domain {
        Domain::new(dvec(&[-2.0, -2.0, -2.0]), dvec(&[2.0, 2.0, 2.0])).unwrap()
    }

    /// The three-cut arrangement of the worked 3-D example.
    fn example_cuts() -> Vec<Hyperplane> {
        vec![
            Hyperplane::new(dvec(&[-1.0, 2.0, 5.0])),
            Hyperplane::new(dvec(&[0.1, -0.5, -0.2])),
            Hyperplane::new(dvec(&[-1.0, 1.0, 0.0])),
        ]
    }

    #[test]
    fn example_sigma_matrix() {
        let sig = chambers(&example_cuts(), &cube3(), DEFAULT_CUT_LIMIT).unwrap();
        let expect = vec![
            vec![0, 0, 0, 1, 1],
            vec![0, 0, 1, 0, 0],
            vec![0, 1, 0, 0, 1],
        ];
        assert_eq!(sig.to_rows(), expect);
        assert_eq!(sig.n_chambers(), 5);
    }

    #[test]
    fn example_adjacency_matrix() {
        let sig = chambers(&example_cuts(), &cube3(), DEFAULT_CUT_LIMIT).unwrap();
        let adj = adjacency(&sig);
        let expect = vec![
            vec![0, 3, 2, 1, 0],
            vec![3, 0, 0, 0, 1],
            vec![2, 0, 0, 0, 0],
            vec![1, 0, 0, 0, 3],
            vec![0, 1, 0, 3, 0],
        ];
        assert_eq!(adj.to_rows(), expect);
    }

    #[test]
    fn example_region_halfspaces() {
        let sig = chambers(&example_cuts(), &cube3(), DEFAULT_CUT_LIMIT).unwrap();
        let (regs, _, p) = regions(&sig);
        assert_eq!(p, 5);
        // boundary sets with orientations, 0-based hyperplane indices
        assert_eq!(regs[0].halfspaces, vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(regs[1].halfspaces, vec![(0, 0), (2, 1)]);
        assert_eq!(regs[2].halfspaces, vec![(1, 1)]);
        assert_eq!(regs[3].halfspaces, vec![(0, 1), (2, 0)]);
        assert_eq!(regs[4].halfspaces, vec![(0, 1), (2, 1)]);

        // oriented coefficient rows match the printed inequalities
        let rows = regs[2].oriented_rows(&example_cuts());
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, dvec(&[-0.1, 0.5, 0.2]));
        assert_eq!(rows[0].1, -1.0);

        let rows = regs[3].oriented_rows(&example_cuts());
        assert_eq!(rows[0].0, dvec(&[1.0, -2.0, -5.0]));
        assert_eq!(rows[1].0, dvec(&[-1.0, 1.0, 0.0]));
    }

    #[test]
    fn sigma_011_is_infeasible_like_the_brute_force_grid() {
        // oracle: no grid point of the cube has pattern (0,1,1)
        let cuts = example_cuts();
        let n = 41;
        let mut seen = false;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let t = |k: usize| -2.0 + 4.0 * k as f64 / (n - 1) as f64;
                    let x = dvec(&[t(a), t(b), t(c)]);
                    let m = FeasibilityMatrix::mask_of_point(&cuts, &x);
                    if m == 0b011 {
                        seen = true;
                    }
                }
            }
        }
        assert!(!seen, "grid oracle found sigma=(0,1,1)");
        assert!(!lp_feasible(&cuts, 0b011, &cube3(), STRICT_MARGIN_EPS).unwrap());
    }

    #[test]
    fn single_cut_changes_chamber_count() {
        let dom = Domain::new(dvec(&[-2.0, -2.0]), dvec(&[2.0, 2.0])).unwrap();
        // x1 = 1 crosses the box: two chambers
        let h = vec![Hyperplane::new(dvec(&[1.0, 0.0]))];
        let sig = chambers(&h, &dom, DEFAULT_CUT_LIMIT).unwrap();
        assert_eq!(sig.to_rows(), vec![vec![0, 1]]);
        let adj = adjacency(&sig);
        assert_eq!(adj.to_rows(), vec![vec![0, 1], vec![1, 0]]);
        let (regs, _, _) = regions(&sig);
        assert_eq!(regs[0].halfspaces, vec![(0, 0)]);
        assert_eq!(regs[1].halfspaces, vec![(0, 1)]);

        // 0.1*x1 = 1 misses the box entirely: one chamber, sigma = 0
        let h = vec![Hyperplane::new(dvec(&[0.1, 0.0]))];
        let sig = chambers(&h, &dom, DEFAULT_CUT_LIMIT).unwrap();
        assert_eq!(sig.to_rows(), vec![vec![0]]);
        let adj = adjacency(&sig);
        assert_eq!(adj.to_rows(), vec![vec![0]]);
    }

    #[test]
    fn too_many_cuts_is_rejected() {
        let dom = Domain::new(dvec(&[-1.0, -1.0]), dvec(&[1.0, 1.0])).unwrap();
        let cuts: Vec<Hyperplane> =
            (0..21).map(|i| Hyperplane::new(dvec(&[1.0 + i as f64, 0.5]))).collect();
        assert_eq!(
            chambers(&cuts, &dom, DEFAULT_CUT_LIMIT),
            Err(PartitionError::TooManyCuts { n_cuts: 21, limit: 20 })
        );
    }

    #[test]
    fn locate_origin_in_example() {
        let cuts = example_cuts();
        let sig = chambers(&cuts, &cube3(), DEFAULT_CUT_LIMIT).unwrap();
        // all three inner products at the origin are 0 < 1
        let p = locate_chamber(&cuts, &sig, &dvec(&[0.0, 0.0, 0.0]));
        assert_eq!(sig.columns()[p], 0);
    }

    #[test]
    fn locate_on_cut_takes_the_geq_side() {
        let dom = Domain::new(dvec(&[-2.0, -2.0]), dvec(&[2.0, 2.0])).unwrap();
        let cuts = vec![Hyperplane::new(dvec(&[1.0, 0.0]))];
        let sig = chambers(&cuts, &dom, DEFAULT_CUT_LIMIT).unwrap();
        let p = locate_chamber(&cuts, &sig, &dvec(&[1.0, 0.3]));
        assert_eq!(sig.columns()[p], 1);
    }

    #[test]
    fn box_vertices_always_locate() {
        let cuts = example_cuts();
        let dom = cube3();
        let sig = chambers(&cuts, &dom, DEFAULT_CUT_LIMIT).unwrap();
        let half = dom.half_width();
        for m in 0..8u32 {
            let v = DVector::from_fn(3, |j, _| if m >> j & 1 == 1 { half[j] } else { -half[j] });
            let p = locate_chamber(&cuts, &sig, &v);
            assert!(p < sig.n_chambers());
        }
    }

    #[test]
    fn identical_h_vectors_give_identical_sigma() {
        let dom = cube3();
        let a = chambers(&example_cuts(), &dom, DEFAULT_CUT_LIMIT).unwrap();
        let b = chambers(&example_cuts(), &dom, DEFAULT_CUT_LIMIT).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zaslavsky_bound_on_random_arrangements() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for trial in 0..100 {
            let d = rng.gen_range(2..=4usize);
            let n_c = rng.gen_range(1..=8usize);
            let dom = Domain::new(
                DVector::from_element(d, -2.0),
                DVector::from_element(d, 2.0),
            )
            .unwrap();
            let rho = crate::geometry::enclosing_hypersphere(&dom).radius;
            let genome = crate::geometry::AngleGenome::new(
                n_c,
                d,
                (0..n_c * d * (d - 1))
                    .map(|g| {
                        let j = g % (d - 1);
                        rng.gen_range(0.0..crate::geometry::AngleGenome::angle_upper_bound(d, j))
                    })
                    .collect(),
            );
            let arr = crate::geometry::decode_genome(&genome, &crate::geometry::Hypersphere { radius: rho });
            let cuts = arr.valid_hyperplanes();
            if cuts.len() != n_c {
                continue; // degenerate draw
            }
            let sig = chambers(&cuts, &dom, DEFAULT_CUT_LIMIT).unwrap();
            let bound: u64 = (0..=n_c.min(d)).map(|k| binomial(n_c, k)).sum();
            assert!(
                (sig.n_chambers() as u64) <= bound,
                "trial {trial}: P={} exceeds Zaslavsky bound {bound} (n_c={n_c}, d={d})",
                sig.n_chambers()
            );
        }
    }

    fn binomial(n: usize, k: usize) -> u64 {
        let mut r = 1u64;
        for i in 0..k {
            r = r * (n - i) as u64 / (i + 1) as u64;
        }
        r
    }

    #[test]
    fn degeneracy_limit_is_exported() {
        assert_eq!(DEGENERACY_COND_LIMIT, 1e12);
    }
}
