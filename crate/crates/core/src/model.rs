//! The final PWA model artifact: evaluation, partition re-validation,
//! facet sampling, and the canonical JSON format.
//!
//! A model stores everything a downstream consumer needs without redoing
//! the LP machinery: the domain (with its centering shift), the cutting
//! hyperplanes, the Σ and adjacency matrices, the minimal halfspace
//! description of every region, and one affine mode per region. Evaluation
//! matches a point's σ vector against the Σ columns, the same convention
//! that defines the partition.

use crate::fitting::{self, AffineMode, SampleSet};
use crate::geometry::{Domain, Hyperplane};
use crate::lp::{self, Constraint, Sense};
use crate::partition::{self, AdjacencyMatrix, FeasibilityMatrix, Region};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("point lies outside the model domain (axis {axis}: {value} not in [{lower}, {upper}])")]
    OutOfDomain {
        axis: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl ModelError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

/// Run provenance and headline quality numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetadata {
    pub seed: u64,
    pub n_cuts: usize,
    pub p_count: usize,
    pub gamma: f64,
    pub max_rel_err: f64,
}

/// A fitted piecewise-affine model over a box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PwaModel {
    pub domain: Domain,
    pub hyperplanes: Vec<Hyperplane>,
    pub sigma: FeasibilityMatrix,
    pub adjacency: AdjacencyMatrix,
    pub regions: Vec<Region>,
    pub modes: Vec<AffineMode>,
    pub continuity: bool,
    pub metadata: ModelMetadata,
}

/// Tolerance factor for the out-of-domain check.
const DOMAIN_TOL: f64 = 1e-9;

impl PwaModel {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn out_dim(&self) -> usize {
        self.modes.first().map_or(0, |m| m.offset.len())
    }

    pub fn p_count(&self) -> usize {
        self.modes.len()
    }

    /// Region index of a working-frame point (σ-vector matching with the
    /// Hamming fallback on boundary slivers).
    pub fn locate_working(&self, x: &DVector<f64>) -> usize {
        partition::locate_chamber(&self.hyperplanes, &self.sigma, x)
    }

    /// Evaluates the model at an original-frame point.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        let w = self.domain.to_working(x);
        if !self.domain.contains_working(&w, DOMAIN_TOL) {
            let half = self.domain.half_width();
            let axis = (0..self.dim())
                .max_by(|&a, &b| {
                    let ra = w[a].abs() - half[a];
                    let rb = w[b].abs() - half[b];
                    ra.partial_cmp(&rb).unwrap()
                })
                .unwrap();
            return Err(ModelError::OutOfDomain {
                axis,
                value: x[axis],
                lower: self.domain.lower()[axis],
                upper: self.domain.upper()[axis],
            });
        }
        let p = self.locate_working(&w);
        Ok(self.modes[p].eval(&w))
    }

    /// Draws `count` points on the shared facet of adjacent regions
    /// `(p, q)` by hit-and-run inside the facet polytope (the facet is
    /// `(d−1)`-dimensional, so rejection sampling would never hit it).
    /// Returns working-frame points; empty when the facet has no interior.
    pub fn sample_facet(&self, p: usize, q: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let entry = self.adjacency.entry(p, q);
        if entry == 0 {
            return Vec::new();
        }
        let i = (entry - 1) as usize;
        let d = self.dim();
        let h = self.hyperplanes[i].coeffs();
        let half = self.domain.half_width();

        // region constraints (closed) plus the facet equality
        let mut cons: Vec<Constraint> = Vec::new();
        for &(j, s) in &self.regions[p].halfspaces {
            if j == i {
                continue;
            }
            let sense = if s == 0 { Sense::Le } else { Sense::Ge };
            cons.push(Constraint::new(self.hyperplanes[j].coeffs().clone(), sense, 1.0));
        }
        cons.push(Constraint::new(h.clone(), Sense::Eq, 1.0));
        let Ok(Some(start)) = lp::feasible_point(&(-&half), &half, &cons) else {
            return Vec::new();
        };

        // orthonormal basis of the hyperplane's tangent space
        let hn = h / h.norm();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
        for j in 0..d {
            let mut v = DVector::zeros(d);
            v[j] = 1.0;
            v -= &hn * hn.dot(&v);
            for b in &basis {
                let dot = b.dot(&v);
                v -= b * dot;
            }
            let n = v.norm();
            if n > 1e-8 {
                basis.push(v / n);
            }
            if basis.len() == d - 1 {
                break;
            }
        }
        if basis.len() != d - 1 {
            return Vec::new();
        }

        // inequality rows over the tangent coordinates t: a·t <= b
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut push_row = |coeffs: &DVector<f64>, rhs: f64, start: &DVector<f64>| {
            let a = DVector::from_fn(d - 1, |m, _| basis[m].dot(coeffs));
            rows.push((a, rhs - coeffs.dot(start)));
        };
        for &(j, s) in &self.regions[p].halfspaces {
            if j == i {
                continue;
            }
            let c = self.hyperplanes[j].coeffs();
            if s == 0 {
                push_row(c, 1.0, &start);
            } else {
                push_row(&(-c), -1.0, &start);
            }
        }
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            push_row(&e, half[j], &start);
            e[j] = -1.0;
            push_row(&e, half[j], &start);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = DVector::zeros(d - 1);
        let mut out = Vec::with_capacity(count);
        let burn_in = 16;
        let mut produced = 0;
        let mut attempts = 0;
        while produced < burn_in + count && attempts < 40 * (burn_in + count) {
            attempts += 1;
            let dir = DVector::from_fn(d - 1, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let nrm = dir.norm();
            if nrm < 1e-12 {
                continue;
            }
            let dir = dir / nrm;
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for (a, b) in &rows {
                let ad = a.dot(&dir);
                let slack = b - a.dot(&t);
                if ad.abs() < 1e-14 {
                    if slack < -1e-9 {
                        lo = 1.0;
                        hi = 0.0;
                        break;
                    }
                } else if ad > 0.0 {
                    hi = hi.min(slack / ad);
                } else {
                    lo = lo.max(slack / ad);
                }
            }
            if !(hi - lo).is_finite() || hi - lo <= 1e-12 {
                continue;
            }
            let tau = rng.gen_range(lo..hi);
            t += dir * tau;
            produced += 1;
            if produced > burn_in {
                let mut x = start.clone();
                for m in 0..d - 1 {
                    x += &basis[m] * t[m];
                }
                out.push(x);
            }
        }
        out
    }

    /// Re-checks the partition axioms and (when flagged) the continuity
    /// conditions on a fresh sample cloud; recomputes the error metrics
    /// when the original function is supplied.
    pub fn validate(
        &self,
        samples_n: usize,
        seed: u64,
        f: Option<&dyn Fn(&DVector<f64>) -> DVector<f64>>,
    ) -> ValidationReport {
        let mut findings = Vec::new();
        let p_count = self.p_count();

        // nonemptiness: every stored region must still pass its feasibility LP
        let half = self.domain.half_width();
        let rho = half.norm();
        let lp_nonempty: Vec<bool> = self
            .regions
            .iter()
            .map(|r| {
                let cons: Vec<Constraint> = r
                    .halfspaces
                    .iter()
                    .map(|&(j, s)| {
                        let h = self.hyperplanes[j].coeffs();
                        if s == 0 {
                            let scale = (h.norm() * rho).max(1.0);
                            Constraint::new(
                                h.clone(),
                                Sense::Le,
                                1.0 - partition::STRICT_MARGIN_EPS * scale,
                            )
                        } else {
                            Constraint::new(h.clone(), Sense::Ge, 1.0)
                        }
                    })
                    .collect();
                lp::feasible(&(-&half), &half, &cons).unwrap_or(false)
            })
            .collect();
        for (p, ok) in lp_nonempty.iter().enumerate() {
            if !ok {
                findings.push(format!("region {p} has an empty feasibility LP"));
            }
        }

        // assignment uniqueness and coverage over a fresh cloud
        let samples = fitting::sample_domain(&self.domain, samples_n, seed);
        let mut per_region_samples = vec![0usize; p_count];
        let mut multi_match_samples = 0usize;
        let mut unmatched_samples = 0usize;
        for k in 0..samples.len() {
            let x = samples.points.row(k).transpose();
            let mask = FeasibilityMatrix::mask_of_point(&self.hyperplanes, &x);
            let matches = self.sigma.columns().iter().filter(|&&c| c == mask).count();
            match matches {
                0 => unmatched_samples += 1,
                1 => {}
                _ => multi_match_samples += 1,
            }
            per_region_samples[self.locate_working(&x)] += 1;
        }
        if multi_match_samples > 0 {
            findings.push(format!(
                "{multi_match_samples} samples match more than one sigma column (duplicate columns)"
            ));
        }
        if unmatched_samples > samples_n / 1000 + 1 {
            findings.push(format!(
                "{unmatched_samples} samples failed exact sigma lookup (beyond boundary slivers)"
            ));
        }

        // continuity residuals from the stored modes
        let continuity = if self.continuity {
            let mut max_jac = 0.0f64;
            let mut max_off = 0.0f64;
            for (p, q, i) in self.adjacency.edges() {
                let h = self.hyperplanes[i].coeffs();
                let jdiff = &self.modes[p].jac - &self.modes[q].jac;
                // best hinge vector for this pair
                let c = &jdiff * h / h.norm_squared();
                let resid = (&jdiff - &c * h.transpose()).norm();
                max_jac = max_jac.max(resid);
                let kdiff = &self.modes[p].offset - &self.modes[q].offset;
                max_off = max_off.max((kdiff + c).norm());
            }
            let scale = 1.0
                + self
                    .modes
                    .iter()
                    .map(|m| m.jac.norm().max(m.offset.norm()))
                    .fold(0.0, f64::max);
            if max_jac > 1e-8 * scale {
                findings.push(format!("continuity Jacobian residual {max_jac:.3e}"));
            }
            if max_off > 1e-8 * scale {
                findings.push(format!("continuity offset residual {max_off:.3e}"));
            }
            Some(ContinuityCheck {
                max_jac_residual: max_jac,
                max_offset_residual: max_off,
            })
        } else {
            None
        };

        // error metrics against a supplied function
        let recomputed = f.map(|func| {
            let mut vals = DMatrix::zeros(samples.len(), self.out_dim());
            for k in 0..samples.len() {
                let x = samples.points.row(k).transpose();
                let v = func(&self.domain.to_original(&x));
                for r in 0..self.out_dim() {
                    vals[(k, r)] = v[r];
                }
            }
            let assignment: Vec<usize> = (0..samples.len())
                .map(|k| self.locate_working(&samples.points.row(k).transpose()))
                .collect();
            let full = SampleSet {
                points: samples.points.clone(),
                values: vals,
                seed,
                assignment: assignment.clone(),
            };
            fitting::cost(&full, &self.modes, &assignment)
        });

        ValidationReport {
            per_region_samples,
            lp_nonempty,
            multi_match_samples,
            unmatched_samples,
            continuity,
            recomputed,
            passed: findings.is_empty(),
            findings,
        }
    }

    /// Canonical JSON bytes (field order fixed, floats shortest
    /// round-trip); `deserialize(serialize(m))` is structurally lossless.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let json = ModelJson {
            version: 1,
            dim: self.dim(),
            outdim: self.out_dim(),
            domain: DomainJson {
                lower: self.domain.lower().iter().copied().collect(),
                upper: self.domain.upper().iter().copied().collect(),
                shift: self.domain.shift().iter().copied().collect(),
            },
            hyperplanes: self
                .hyperplanes
                .iter()
                .map(|h| h.coeffs().iter().copied().collect())
                .collect(),
            sigma: self.sigma.to_rows(),
            adjacency: self.adjacency.to_rows(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionJson {
                    halfspaces: r
                        .halfspaces
                        .iter()
                        .map(|&(i, s)| HalfspaceJson { i: i + 1, sigma: s })
                        .collect(),
                })
                .collect(),
            modes: self
                .modes
                .iter()
                .map(|m| ModeJson {
                    j: (0..m.jac.nrows())
                        .map(|r| m.jac.row(r).iter().copied().collect())
                        .collect(),
                    k: m.offset.iter().copied().collect(),
                })
                .collect(),
            continuity: self.continuity,
            metadata: MetadataJson {
                seed: self.metadata.seed,
                nc: self.metadata.n_cuts,
                p: self.metadata.p_count,
                gamma: self.metadata.gamma,
                max_rel_err: self.metadata.max_rel_err,
            },
        };
        let mut bytes = serde_json::to_vec_pretty(&json).expect("model serialization");
        bytes.push(b'\n');
        bytes
    }

    /// Parses and structurally validates model JSON. Errors carry the JSON
    /// pointer of the offending field.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let value: Value = serde_json::from_slice(bytes)
            .map_err(|e| ModelError::schema("/", format!("invalid JSON: {e}")))?;
        parse_model(&value)
    }
}

/// Continuity residuals extracted from the stored modes.
#[derive(Debug, Clone, Copy)]
pub struct ContinuityCheck {
    pub max_jac_residual: f64,
    pub max_offset_residual: f64,
}

/// Outcome of [`PwaModel::validate`]; `findings` lists every violated
/// check in human-readable form.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub per_region_samples: Vec<usize>,
    pub lp_nonempty: Vec<bool>,
    pub multi_match_samples: usize,
    pub unmatched_samples: usize,
    pub continuity: Option<ContinuityCheck>,
    /// (gamma, max_rel_err) recomputed against a supplied function.
    pub recomputed: Option<(f64, f64)>,
    pub passed: bool,
    pub findings: Vec<String>,
}

#[derive(Serialize)]
struct ModelJson {
    version: u32,
    dim: usize,
    outdim: usize,
    domain: DomainJson,
    hyperplanes: Vec<Vec<f64>>,
    sigma: Vec<Vec<u8>>,
    adjacency: Vec<Vec<u32>>,
    regions: Vec<RegionJson>,
    modes: Vec<ModeJson>,
    continuity: bool,
    metadata: MetadataJson,
}

#[derive(Serialize)]
struct DomainJson {
    lower: Vec<f64>,
    upper: Vec<f64>,
    shift: Vec<f64>,
}

#[derive(Serialize)]
struct RegionJson {
    halfspaces: Vec<HalfspaceJson>,
}

#[derive(Serialize)]
struct HalfspaceJson {
    i: usize,
    sigma: u8,
}

#[derive(Serialize)]
struct ModeJson {
    #[serde(rename = "J")]
    j: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    k: Vec<f64>,
}

#[derive(Serialize)]
struct MetadataJson {
    seed: u64,
    nc: usize,
    #[serde(rename = "P")]
    p: usize,
    gamma: f64,
    max_rel_err: f64,
}

// ----- path-tracked deserialization -----

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value, ModelError> {
    let map = obj
        .as_object()
        .ok_or_else(|| ModelError::schema(path, "expected an object"))?;
    map.get(key)
        .ok_or_else(|| ModelError::schema(&format!("{path}/{key}"), "missing required field"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64, ModelError> {
    v.as_f64()
        .ok_or_else(|| ModelError::schema(path, "expected a number"))
}

fn as_u64(v: &Value, path: &str) -> Result<u64, ModelError> {
    v.as_u64()
        .ok_or_else(|| ModelError::schema(path, "expected a nonnegative integer"))
}

fn as_bool(v: &Value, path: &str) -> Result<bool, ModelError> {
    v.as_bool()
        .ok_or_else(|| ModelError::schema(path, "expected a boolean"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ModelError> {
    v.as_array()
        .ok_or_else(|| ModelError::schema(path, "expected an array"))
}

fn f64_vec(v: &Value, path: &str, expect_len: Option<usize>) -> Result<Vec<f64>, ModelError> {
    let arr = as_array(v, path)?;
    if let Some(n) = expect_len {
        if arr.len() != n {
            return Err(ModelError::schema(
                path,
                format!("expected {n} entries, found {}", arr.len()),
            ));
        }
    }
    arr.iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{path}/{i}")))
        .collect()
}

fn parse_model(v: &Value) -> Result<PwaModel, ModelError> {
    let version = as_u64(field(v, "version", "")?, "/version")?;
    if version != 1 {
        return Err(ModelError::schema("/version", format!("unsupported version {version}")));
    }
    let dim = as_u64(field(v, "dim", "")?, "/dim")? as usize;
    let outdim = as_u64(field(v, "outdim", "")?, "/outdim")? as usize;
    if dim == 0 || outdim == 0 {
        return Err(ModelError::schema("/dim", "dim and outdim must be positive"));
    }

    let dom = field(v, "domain", "")?;
    let lower = f64_vec(field(dom, "lower", "/domain")?, "/domain/lower", Some(dim))?;
    let upper = f64_vec(field(dom, "upper", "/domain")?, "/domain/upper", Some(dim))?;
    let shift = f64_vec(field(dom, "shift", "/domain")?, "/domain/shift", Some(dim))?;
    let domain = Domain::new(
        DVector::from_vec(lower),
        DVector::from_vec(upper),
    )
    .map_err(|e| ModelError::schema("/domain", e.to_string()))?;
    for (j, s) in shift.iter().enumerate() {
        if (s - domain.shift()[j]).abs() > 1e-9 * (1.0 + s.abs()) {
            return Err(ModelError::schema(
                &format!("/domain/shift/{j}"),
                "shift must be the box center",
            ));
        }
    }

    let hp = as_array(field(v, "hyperplanes", "")?, "/hyperplanes")?;
    let hyperplanes: Vec<Hyperplane> = hp
        .iter()
        .enumerate()
        .map(|(i, row)| {
            f64_vec(row, &format!("/hyperplanes/{i}"), Some(dim)).map(|c| {
                Hyperplane::new(DVector::from_vec(c))
            })
        })
        .collect::<Result<_, _>>()?;
    let n_cuts = hyperplanes.len();

    let sig_rows = as_array(field(v, "sigma", "")?, "/sigma")?;
    if sig_rows.len() != n_cuts {
        return Err(ModelError::schema(
            "/sigma",
            format!("expected {n_cuts} rows, found {}", sig_rows.len()),
        ));
    }
    let mut sigma_bits: Vec<Vec<u8>> = Vec::with_capacity(n_cuts);
    let mut p_count_sigma = None;
    for (i, row) in sig_rows.iter().enumerate() {
        let path = format!("/sigma/{i}");
        let arr = as_array(row, &path)?;
        if let Some(p) = p_count_sigma {
            if arr.len() != p {
                return Err(ModelError::schema(&path, "ragged sigma rows"));
            }
        } else {
            p_count_sigma = Some(arr.len());
        }
        let bits = arr
            .iter()
            .enumerate()
            .map(|(c, x)| {
                let b = as_u64(x, &format!("{path}/{c}"))?;
                if b > 1 {
                    return Err(ModelError::schema(&format!("{path}/{c}"), "sigma entries are 0 or 1"));
                }
                Ok(b as u8)
            })
            .collect::<Result<Vec<u8>, ModelError>>()?;
        sigma_bits.push(bits);
    }
    let p_count = p_count_sigma.unwrap_or(1);
    let columns: Vec<u64> = (0..p_count)
        .map(|p| {
            (0..n_cuts).fold(0u64, |m, i| {
                m | (u64::from(sigma_bits[i][p]) << (n_cuts - 1 - i))
            })
        })
        .collect();
    if n_cuts == 0 {
        if p_count != 1 {
            return Err(ModelError::schema("/sigma", "a cut-free model has exactly one chamber"));
        }
    } else if columns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::schema(
            "/sigma",
            "columns must be distinct and in ascending sweep order",
        ));
    }
    let sigma = FeasibilityMatrix::from_columns(n_cuts, columns);

    let adj_rows = as_array(field(v, "adjacency", "")?, "/adjacency")?;
    if adj_rows.len() != p_count {
        return Err(ModelError::schema(
            "/adjacency",
            format!("expected {p_count} rows, found {}", adj_rows.len()),
        ));
    }
    let mut adj: Vec<Vec<u32>> = Vec::with_capacity(p_count);
    for (p, row) in adj_rows.iter().enumerate() {
        let path = format!("/adjacency/{p}");
        let arr = as_array(row, &path)?;
        if arr.len() != p_count {
            return Err(ModelError::schema(&path, "adjacency must be P x P"));
        }
        let vals = arr
            .iter()
            .enumerate()
            .map(|(q, x)| {
                let e = as_u64(x, &format!("{path}/{q}"))?;
                if e as usize > n_cuts {
                    return Err(ModelError::schema(
                        &format!("{path}/{q}"),
                        "adjacency entry exceeds the hyperplane count",
                    ));
                }
                Ok(e as u32)
            })
            .collect::<Result<Vec<u32>, ModelError>>()?;
        adj.push(vals);
    }
    for p in 0..p_count {
        for q in 0..p_count {
            if adj[p][q] != adj[q][p] {
                return Err(ModelError::schema(
                    &format!("/adjacency/{p}/{q}"),
                    "adjacency must be symmetric",
                ));
            }
        }
    }
    let adjacency = AdjacencyMatrix::from_rows(&adj);

    let reg_rows = as_array(field(v, "regions", "")?, "/regions")?;
    if reg_rows.len() != p_count {
        return Err(ModelError::schema(
            "/regions",
            format!("expected {p_count} regions, found {}", reg_rows.len()),
        ));
    }
    let mut regions = Vec::with_capacity(p_count);
    for (p, r) in reg_rows.iter().enumerate() {
        let path = format!("/regions/{p}");
        let hs = as_array(field(r, "halfspaces", &path)?, &format!("{path}/halfspaces"))?;
        let mut halfspaces = Vec::with_capacity(hs.len());
        for (m, h) in hs.iter().enumerate() {
            let hp = format!("{path}/halfspaces/{m}");
            let i = as_u64(field(h, "i", &hp)?, &format!("{hp}/i"))? as usize;
            if i == 0 || i > n_cuts {
                return Err(ModelError::schema(
                    &format!("{hp}/i"),
                    "hyperplane index is 1-based and bounded by the cut count",
                ));
            }
            let s = as_u64(field(h, "sigma", &hp)?, &format!("{hp}/sigma"))?;
            if s > 1 {
                return Err(ModelError::schema(&format!("{hp}/sigma"), "sigma is 0 or 1"));
            }
            halfspaces.push((i - 1, s as u8));
        }
        regions.push(Region { id: p, halfspaces });
    }

    let mode_rows = as_array(field(v, "modes", "")?, "/modes")?;
    if mode_rows.len() != p_count {
        return Err(ModelError::schema(
            "/modes",
            format!("expected {p_count} modes, found {}", mode_rows.len()),
        ));
    }
    let mut modes = Vec::with_capacity(p_count);
    for (p, m) in mode_rows.iter().enumerate() {
        let path = format!("/modes/{p}");
        let jrows = as_array(field(m, "J", &path)?, &format!("{path}/J"))?;
        if jrows.len() != outdim {
            return Err(ModelError::schema(
                &format!("{path}/J"),
                format!("expected {outdim} rows"),
            ));
        }
        let mut jac = DMatrix::zeros(outdim, dim);
        for (r, row) in jrows.iter().enumerate() {
            let vals = f64_vec(row, &format!("{path}/J/{r}"), Some(dim))?;
            for (c, val) in vals.into_iter().enumerate() {
                jac[(r, c)] = val;
            }
        }
        let k = f64_vec(field(m, "K", &path)?, &format!("{path}/K"), Some(outdim))?;
        modes.push(AffineMode {
            jac,
            offset: DVector::from_vec(k),
        });
    }

    let continuity = as_bool(field(v, "continuity", "")?, "/continuity")?;

    let md = field(v, "metadata", "")?;
    let metadata = ModelMetadata {
        seed: as_u64(field(md, "seed", "/metadata")?, "/metadata/seed")?,
        n_cuts: as_u64(field(md, "nc", "/metadata")?, "/metadata/nc")? as usize,
        p_count: as_u64(field(md, "P", "/metadata")?, "/metadata/P")? as usize,
        gamma: as_f64(field(md, "gamma", "/metadata")?, "/metadata/gamma")?,
        max_rel_err: as_f64(field(md, "max_rel_err", "/metadata")?, "/metadata/max_rel_err")?,
    };

    Ok(PwaModel {
        domain,
        hyperplanes,
        sigma,
        adjacency,
        regions,
        modes,
        continuity,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use approx::assert_relative_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// Single-mode model f(x) = 2x + 1 on [0, 4] (shifted domain).
    fn affine_model_1d() -> PwaModel {
        let domain = Domain::new(dvec(&[0.0]), dvec(&[4.0])).unwrap();
        // working frame x' = x - 2; f(x) = 2x + 1 = 2x' + 5
        PwaModel {
            domain,
            hyperplanes: vec![],
            sigma: FeasibilityMatrix::from_columns(0, vec![0]),
            adjacency: AdjacencyMatrix::from_rows(&[vec![0]]),
            regions: vec![Region { id: 0, halfspaces: vec![] }],
            modes: vec![AffineMode {
                jac: DMatrix::from_row_slice(1, 1, &[2.0]),
                offset: dvec(&[5.0]),
            }],
            continuity: false,
            metadata: ModelMetadata {
                seed: 0,
                n_cuts: 0,
                p_count: 1,
                gamma: 0.0,
                max_rel_err: 0.0,
            },
        }
    }

    fn hinge_model() -> PwaModel {
        // |x1 - 1| on [-2,2]^2 with the cut {x1 = 1}
        let domain = Domain::new(dvec(&[-2.0, -2.0]), dvec(&[2.0, 2.0])).unwrap();
        let hyperplanes = vec![Hyperplane::new(dvec(&[1.0, 0.0]))];
        let sigma = FeasibilityMatrix::from_columns(1, vec![0, 1]);
        let adjacency = AdjacencyMatrix::from_rows(&[vec![0, 1], vec![1, 0]]);
        let regions = vec![
            Region { id: 0, halfspaces: vec![(0, 0)] },
            Region { id: 1, halfspaces: vec![(0, 1)] },
        ];
        let modes = vec![
            AffineMode {
                jac: DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
                offset: dvec(&[1.0]),
            },
            AffineMode {
                jac: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                offset: dvec(&[-1.0]),
            },
        ];
        PwaModel {
            domain,
            hyperplanes,
            sigma,
            adjacency,
            regions,
            modes,
            continuity: true,
            metadata: ModelMetadata {
                seed: 3,
                n_cuts: 1,
                p_count: 2,
                gamma: 0.0,
                max_rel_err: 0.0,
            },
        }
    }

    #[test]
    fn evaluate_simple_affine() {
        let m = affine_model_1d();
        let y = m.evaluate(&dvec(&[3.0])).unwrap();
        assert_relative_eq!(y[0], 7.0);
    }

    #[test]
    fn evaluate_rejects_out_of_domain() {
        let m = affine_model_1d();
        assert!(matches!(
            m.evaluate(&dvec(&[4.5])),
            Err(ModelError::OutOfDomain { axis: 0, .. })
        ));
    }

    #[test]
    fn facet_point_agrees_under_both_modes() {
        let m = hinge_model();
        let pts = m.sample_facet(0, 1, 50, 9);
        assert!(!pts.is_empty());
        for x in &pts {
            assert_relative_eq!(m.hyperplanes[0].dot(x), 1.0, epsilon = 1e-9);
            let a = m.modes[0].eval(x);
            let b = m.modes[1].eval(x);
            assert!((a - b).norm() <= 1e-8);
            assert!(x[1].abs() <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let m = hinge_model();
        let bytes = m.to_json_bytes();
        let back = PwaModel::from_json_bytes(&bytes).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn missing_modes_reports_path() {
        let m = hinge_model();
        let mut v: Value = serde_json::from_slice(&m.to_json_bytes()).unwrap();
        v.as_object_mut().unwrap().remove("modes");
        let err = PwaModel::from_json_bytes(v.to_string().as_bytes()).unwrap_err();
        match err {
            ModelError::Schema { path, .. } => assert_eq!(path, "/modes"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corrupted_mode_entry_reports_nested_path() {
        let m = hinge_model();
        let mut v: Value = serde_json::from_slice(&m.to_json_bytes()).unwrap();
        v["modes"][1]["J"][0][1] = Value::String("oops".into());
        let err = PwaModel::from_json_bytes(v.to_string().as_bytes()).unwrap_err();
        match err {
            ModelError::Schema { path, .. } => assert_eq!(path, "/modes/1/J/0/1"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validate_passes_on_consistent_model() {
        let m = hinge_model();
        let report = m.validate(2000, 5, Some(&|x: &DVector<f64>| dvec(&[(x[0] - 1.0).abs()])));
        assert!(report.passed, "findings: {:?}", report.findings);
        let (gamma, _) = report.recomputed.unwrap();
        assert!(gamma < 1e-20);
        assert!(report.per_region_samples.iter().all(|&c| c > 0));
    }

    #[test]
    fn validate_flags_duplicate_sigma_column() {
        let mut m = hinge_model();
        // duplicate column: both regions claim sigma = 0
        m.sigma = FeasibilityMatrix::from_columns(1, vec![0, 0]);
        let report = m.validate(500, 5, None);
        assert!(!report.passed);
        assert!(report.multi_match_samples > 0);
    }

    #[test]
    fn validate_reports_offset_continuity_violation() {
        let mut m = hinge_model();
        m.modes[1].offset[0] += 0.1;
        let report = m.validate(500, 5, None);
        assert!(!report.passed);
        let c = report.continuity.unwrap();
        assert_relative_eq!(c.max_offset_residual, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn example_partition_export_matches_printed_inequalities() {
        // the worked 3-D example, modes zeroed
        let domain = Domain::new(dvec(&[-2.0, -2.0, -2.0]), dvec(&[2.0, 2.0, 2.0])).unwrap();
        let hyperplanes = vec![
            Hyperplane::new(dvec(&[-1.0, 2.0, 5.0])),
            Hyperplane::new(dvec(&[0.1, -0.5, -0.2])),
            Hyperplane::new(dvec(&[-1.0, 1.0, 0.0])),
        ];
        let sigma = partition::chambers(&hyperplanes, &domain, 20).unwrap();
        let (regions, adjacency, p_count) = partition::regions(&sigma);
        let modes = vec![
            AffineMode {
                jac: DMatrix::zeros(1, 3),
                offset: dvec(&[0.0]),
            };
            p_count
        ];
        let m = PwaModel {
            domain,
            hyperplanes,
            sigma,
            adjacency,
            regions,
            modes,
            continuity: false,
            metadata: ModelMetadata {
                seed: 0,
                n_cuts: 3,
                p_count,
                gamma: 0.0,
                max_rel_err: 0.0,
            },
        };
        let v: Value = serde_json::from_slice(&m.to_json_bytes()).unwrap();
        // region 3 (third printed region): single halfspace, hyperplane 2, sigma 1
        let r3 = &v["regions"][2]["halfspaces"];
        assert_eq!(r3.as_array().unwrap().len(), 1);
        assert_eq!(r3[0]["i"], 2);
        assert_eq!(r3[0]["sigma"], 1);
        // region 1 lists all three hyperplanes, all sigma 0
        let r1 = &v["regions"][0]["halfspaces"];
        assert_eq!(r1.as_array().unwrap().len(), 3);
        for k in 0..3 {
            assert_eq!(r1[k]["i"], k as u64 + 1);
            assert_eq!(r1[k]["sigma"], 0);
        }
        let back = PwaModel::from_json_bytes(&m.to_json_bytes()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn random_models_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let d = rng.gen_range(1..=4usize);
            let n_out = rng.gen_range(1..=3usize);
            let lower = DVector::from_fn(d, |_, _| rng.gen_range(-5.0..0.0));
            let upper = DVector::from_fn(d, |_, _| rng.gen_range(0.1..5.0));
            let domain = Domain::new(lower, upper).unwrap();
            let n_cuts = rng.gen_range(0..=3usize);
            let hyperplanes: Vec<Hyperplane> = (0..n_cuts)
                .map(|_| Hyperplane::new(DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))))
                .collect();
            // synthetic, structurally consistent partition data
            let p_count = rng.gen_range(1..=4usize);
            let mut cols: Vec<u64> = (0..1u64 << n_cuts).collect();
            while cols.len() > p_count {
                let k = rng.gen_range(0..cols.len());
                cols.remove(k);
            }
            let p_count = cols.len();
            let sigma = FeasibilityMatrix::from_columns(n_cuts, cols);
            let adjacency = partition::adjacency(&sigma);
            let (regions, _, _) = partition::regions(&sigma);
            let modes: Vec<AffineMode> = (0..p_count)
                .map(|_| AffineMode {
                    jac: DMatrix::from_fn(n_out, d, |_, _| rng.gen_range(-3.0..3.0)),
                    offset: DVector::from_fn(n_out, |_, _| rng.gen_range(-3.0..3.0)),
                })
                .collect();
            let m = PwaModel {
                domain,
                hyperplanes,
                sigma,
                adjacency,
                regions,
                modes,
                continuity: false,
                metadata: ModelMetadata {
                    seed: rng.gen(),
                    n_cuts,
                    p_count,
                    gamma: rng.gen_range(0.0..1.0),
                    max_rel_err: rng.gen_range(0.0..1.0),
                },
            };
            let back = PwaModel::from_json_bytes(&m.to_json_bytes()).unwrap();
            assert_eq!(m, back);
        }
    }

    #[test]
    fn evaluate_agrees_with_fit_prediction_on_every_sample() {
        // the property that model evaluation replays the fit's own locate/mode path
        let domain = Domain::new(dvec(&[-2.0, -2.0]), dvec(&[2.0, 2.0])).unwrap();
        let hyperplanes = vec![
            Hyperplane::new(dvec(&[0.8, 0.4])),
            Hyperplane::new(dvec(&[-0.3, 0.9])),
        ];
        let sigma = partition::chambers(&hyperplanes, &domain, 20).unwrap();
        let (regions, adjacency, p_count) = partition::regions(&sigma);
        let mut samples = fitting::sample_domain(&domain, 1500, 77);
        let mut vals = DMatrix::zeros(samples.len(), 1);
        for k in 0..samples.len() {
            let x = samples.points.row(k).transpose();
            vals[(k, 0)] = (x[0] - 0.5 * x[1]).tanh();
        }
        samples.values = vals;
        let assignment: Vec<usize> = (0..samples.len())
            .map(|k| {
                partition::locate_chamber(&hyperplanes, &sigma, &samples.points.row(k).transpose())
            })
            .collect();
        let fit = fitting::fit_unconstrained(&samples, &assignment, p_count);
        let m = PwaModel {
            domain: domain.clone(),
            hyperplanes,
            sigma,
            adjacency,
            regions,
            modes: fit.modes.clone(),
            continuity: false,
            metadata: ModelMetadata {
                seed: 77,
                n_cuts: 2,
                p_count,
                gamma: fit.gamma,
                max_rel_err: fit.max_rel_err,
            },
        };
        for k in 0..samples.len() {
            let xw = samples.points.row(k).transpose();
            let expect = fit.modes[assignment[k]].eval(&xw);
            let got = m.evaluate(&domain.to_original(&xw)).unwrap();
            assert_eq!(expect, got);
        }
    }

    #[test]
    fn degeneracy_guard_reexport() {
        let _ = geometry::DEGENERACY_COND_LIMIT;
    }
}
