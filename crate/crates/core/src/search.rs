//! Higher-level optimization over cut angles and the iterative
//! cut-escalation loop.
//!
//! For a fixed number of cuts the angle genome is optimized by a seeded
//! generational GA (tournament selection, uniform crossover, Gaussian
//! mutation with a geometrically annealed step, elitism). The fitness of a
//! genome is the lower-level fit cost `Γ* + λ·P` plus penalties for
//! degenerate hyperplanes and under-sampled regions. The escalation loop
//! starts at one cut and adds a cut per iteration until the configured
//! error metric meets the tolerance or the iteration budget is exhausted.
//!
//! Determinism contract: all random draws (init, selection, crossover,
//! mutation) come sequentially from one seeded generator; fitness
//! evaluations are pure and may run on any number of threads without
//! changing the outcome.

use crate::fitting::{self, FitResult, SampleSet};
use crate::geometry::{
    angles_from_point, decode_genome, enclosing_hypersphere, AngleGenome, Domain, Hypersphere,
};
use crate::model::{ModelMetadata, PwaModel};
use crate::partition::{self, AdjacencyMatrix, FeasibilityMatrix, Region};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("function returned a non-finite value at {point:?}")]
    EvaluationFailure { point: Vec<f64> },
}

/// Which error statistic the escalation loop compares against `tol_err`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// The discretized relative squared-error cost Γ* (the literal
    /// stopping quantity of the escalation algorithm).
    Gamma,
    /// Largest per-sample relative error.
    MaxRelErr,
}

/// Knobs of the bi-level search.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Region-count weight λ in the fitness Γ* + λP.
    pub lambda: f64,
    pub population: usize,
    pub generations: usize,
    /// Initial Gaussian mutation step (radians); annealed downward within
    /// a GA run.
    pub mutation_sigma: f64,
    pub crossover_rate: f64,
    pub elitism: usize,
    pub seed: u64,
    pub tol_err: f64,
    /// Outer iteration budget; iteration `i` searches with `n_c = i`.
    pub max_iter: usize,
    pub samples_n: usize,
    pub continuity: bool,
    /// Hard cap on cuts per arrangement (bounds the 2^{n_c} sweep).
    pub nc_limit: usize,
    pub metric: Metric,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            population: 50,
            generations: 60,
            mutation_sigma: 0.15,
            crossover_rate: 0.7,
            elitism: 2,
            seed: 0,
            tol_err: 0.05,
            max_iter: 10,
            samples_n: 5000,
            continuity: false,
            nc_limit: partition::DEFAULT_CUT_LIMIT,
            metric: Metric::Gamma,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.population < 2 {
            return Err(SearchError::InvalidConfig("population must be at least 2".into()));
        }
        if !(self.tol_err > 0.0 && self.tol_err < 1.0) {
            return Err(SearchError::InvalidConfig("tol_err must lie in (0, 1)".into()));
        }
        if self.max_iter < 1 {
            return Err(SearchError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(SearchError::InvalidConfig("lambda must be nonnegative".into()));
        }
        if self.samples_n < 1 {
            return Err(SearchError::InvalidConfig("samples_n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(SearchError::InvalidConfig("crossover_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Immutable inputs shared by all fitness evaluations.
pub struct EvalContext<'a> {
    pub domain: &'a Domain,
    pub sphere: Hypersphere,
    pub samples: &'a SampleSet,
    pub config: &'a SearchConfig,
}

/// Fitness penalty per degenerate hyperplane.
pub const DEGENERACY_PENALTY: f64 = 1e3;
/// Fitness penalty weight on the fraction of under-sampled regions.
pub const UNDERSAMPLED_PENALTY: f64 = 10.0;
/// Above this region count a GA fitness evaluation skips the continuity
/// KKT solve (cubic in P) and stands in the cheap unconstrained fit plus
/// [`CAP_PENALTY`]; the λP term alone already dooms such genomes, this
/// just avoids paying cubic time to learn it. Deterministic, and never
/// applied when the final model is built.
pub const FIT_P_CAP: usize = 128;
/// Added to the fitness when the continuity solve was skipped.
pub const CAP_PENALTY: f64 = 10.0;

/// Light per-genome evaluation summary.
#[derive(Debug, Clone, Copy)]
pub struct GenomeEval {
    pub fitness: f64,
    pub gamma: f64,
    pub max_rel_err: f64,
    pub p_count: usize,
    pub degenerate: usize,
}

/// Full evaluation artifacts, kept only for the winning genome.
pub struct FullEval {
    pub hyperplanes: Vec<crate::geometry::Hyperplane>,
    pub sigma: FeasibilityMatrix,
    pub adjacency: AdjacencyMatrix,
    pub regions: Vec<Region>,
    pub assignment: Vec<usize>,
    pub fit: FitResult,
    pub eval: GenomeEval,
}

/// Decodes, partitions, assigns and fits one genome, returning everything
/// the model builder needs. `exact` forces the full continuity solve even
/// above [`FIT_P_CAP`]; model construction always passes true.
pub fn evaluate_genome_full(genome: &AngleGenome, ctx: &EvalContext<'_>, exact: bool) -> FullEval {
    let arrangement = decode_genome(genome, &ctx.sphere);
    let degenerate = arrangement.degenerate_count();
    let hyperplanes = arrangement.valid_hyperplanes();

    let sigma = partition::chambers(&hyperplanes, ctx.domain, ctx.config.nc_limit)
        .expect("genome size is bounded by nc_limit");
    let assignment: Vec<usize> = (0..ctx.samples.len())
        .map(|k| {
            partition::locate_chamber(&hyperplanes, &sigma, &ctx.samples.points.row(k).transpose())
        })
        .collect();
    let (regions, adjacency, p_count) = partition::regions(&sigma);
    let capped = ctx.config.continuity && !exact && p_count > FIT_P_CAP;
    let fit = if ctx.config.continuity && !capped {
        fitting::fit_continuous(ctx.samples, &assignment, &hyperplanes, &adjacency, p_count)
    } else {
        fitting::fit_unconstrained(ctx.samples, &assignment, p_count)
    };
    let fitness = fit.gamma
        + ctx.config.lambda * p_count as f64
        + DEGENERACY_PENALTY * degenerate as f64
        + UNDERSAMPLED_PENALTY * fit.undersampled_fraction()
        + if capped { CAP_PENALTY } else { 0.0 };
    let eval = GenomeEval {
        fitness,
        gamma: fit.gamma,
        max_rel_err: fit.max_rel_err,
        p_count,
        degenerate,
    };
    FullEval {
        hyperplanes,
        sigma,
        adjacency,
        regions,
        assignment,
        fit,
        eval,
    }
}

/// Fitness of one genome: `Γ* + λP` plus degeneracy and under-sampling
/// penalties (lower is better).
pub fn evaluate_genome(genome: &AngleGenome, ctx: &EvalContext<'_>) -> GenomeEval {
    evaluate_genome_full(genome, ctx, false).eval
}

fn random_genome(n_cuts: usize, dim: usize, rng: &mut ChaCha8Rng) -> AngleGenome {
    let angles = (0..n_cuts * dim * (dim - 1))
        .map(|g| {
            let j = g % (dim - 1);
            rng.gen_range(0.0..AngleGenome::angle_upper_bound(dim, j))
        })
        .collect();
    AngleGenome::new(n_cuts, dim, angles)
}

/// Angles of one cut whose plane `{a·x = t}` has a sparse random normal
/// and an offset inside the box. Uniformly random sphere points rarely
/// produce planes aligned with short axes of an anisotropic box, so a
/// portion of the initial population is seeded from this family; the `d`
/// generating points are spread over the plane's intersection circle with
/// the sphere and converted back to spatial angles.
fn sparse_cut_angles(
    domain: &Domain,
    sphere: &Hypersphere,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    let d = domain.dim();
    let half = domain.half_width();

    // sparse unit normal over 1..=min(3, d) random axes
    let sparsity = rng.gen_range(1..=d.min(3));
    let mut axes: Vec<usize> = (0..d).collect();
    for i in 0..sparsity {
        let j = rng.gen_range(i..d);
        axes.swap(i, j);
    }
    let mut normal = DVector::zeros(d);
    for &ax in &axes[..sparsity] {
        normal[ax] = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    let nn = normal.norm();
    if nn < 1e-12 {
        return None;
    }
    normal /= nn;

    // offset inside the box's extent along the normal, away from zero
    // (planes through the origin are not representable with h·x = 1)
    let extent: f64 = (0..d).map(|j| normal[j].abs() * half[j]).sum();
    let mut t = rng.gen_range(-0.9..0.9) * extent;
    let floor = 0.02 * extent;
    if t.abs() < floor {
        t = floor * if t >= 0.0 { 1.0 } else { -1.0 };
    }

    // d points on (plane ∩ sphere): center + circle directions
    let r = (sphere.radius * sphere.radius - t * t).max(0.0).sqrt();
    if r < 1e-9 {
        return None;
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    for j in 0..d {
        let mut v = DVector::zeros(d);
        v[j] = 1.0;
        v -= &normal * normal.dot(&v);
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
        return None;
    }
    let mut out = Vec::with_capacity(d * (d - 1));
    for k in 0..d {
        let v = if k < d - 1 {
            basis[k].clone()
        } else {
            let mut s = DVector::zeros(d);
            for b in &basis {
                s += b;
            }
            let n = s.norm();
            if n < 1e-12 {
                return None;
            }
            -s / n
        };
        let p = &normal * t + v * r;
        out.extend(angles_from_point(&p, sphere.radius));
    }
    Some(out)
}

fn structured_genome(
    n_cuts: usize,
    domain: &Domain,
    sphere: &Hypersphere,
    rng: &mut ChaCha8Rng,
) -> AngleGenome {
    let dim = domain.dim();
    let mut angles = Vec::with_capacity(n_cuts * dim * (dim - 1));
    for _ in 0..n_cuts {
        match sparse_cut_angles(domain, sphere, rng) {
            Some(a) => angles.extend(a),
            None => {
                for g in 0..dim * (dim - 1) {
                    let j = g % (dim - 1);
                    angles.push(rng.gen_range(0.0..AngleGenome::angle_upper_bound(dim, j)));
                }
            }
        }
    }
    AngleGenome::new(n_cuts, dim, angles)
}

/// Angles of one extra cut whose hyperplane provably misses the box: the
/// `d` generating points sit in a tight cluster around the sphere's
/// tangent point in the `+x₁` direction, so the near-tangent plane stays
/// outside the (strictly thinner) box. Appending it to a genome leaves the
/// partition, the fit, and therefore the fitness unchanged.
fn missing_cut_angles(dim: usize) -> Vec<f64> {
    let delta = 1e-3;
    let mut out = Vec::with_capacity(dim * (dim - 1));
    for k in 0..dim {
        for j in 0..dim - 1 {
            // distinct small offsets keep the point matrix well conditioned
            out.push(delta * (1.0 + k as f64 + 0.37 * j as f64));
        }
    }
    out
}

fn pad_genome(genome: &AngleGenome, extra: Vec<f64>) -> AngleGenome {
    let mut angles = genome.angles.clone();
    angles.extend(extra);
    AngleGenome::new(genome.n_cuts() + 1, genome.dim, angles)
}

struct Individual {
    genome: AngleGenome,
    eval: GenomeEval,
}

/// Runs the generational GA for a fixed cut count and returns the fittest
/// genome with its evaluation. `warm` seeds the initial population with
/// the previous iteration's best genome padded by one extra cut (one
/// random, one provably inert).
pub fn ga_optimize(
    n_cuts: usize,
    ctx: &EvalContext<'_>,
    rng: &mut ChaCha8Rng,
    warm: Option<&AngleGenome>,
) -> (AngleGenome, GenomeEval) {
    let cfg = ctx.config;
    let dim = ctx.domain.dim();
    let n_genes = n_cuts * dim * (dim - 1);

    let mut genomes: Vec<AngleGenome> = Vec::with_capacity(cfg.population);
    if let Some(prev) = warm {
        debug_assert_eq!(prev.n_cuts() + 1, n_cuts);
        genomes.push(pad_genome(prev, missing_cut_angles(dim)));
        match sparse_cut_angles(ctx.domain, &ctx.sphere, rng) {
            Some(extra) => genomes.push(pad_genome(prev, extra)),
            None => genomes.push(pad_genome(prev, missing_cut_angles(dim))),
        }
        let extra: Vec<f64> = (0..dim * (dim - 1))
            .map(|g| {
                let j = g % (dim - 1);
                rng.gen_range(0.0..AngleGenome::angle_upper_bound(dim, j))
            })
            .collect();
        genomes.push(pad_genome(prev, extra));
    }
    // half structured (sparse-normal planes), half uniform random
    while genomes.len() < cfg.population {
        if genomes.len() % 2 == 0 {
            genomes.push(structured_genome(n_cuts, ctx.domain, &ctx.sphere, rng));
        } else {
            genomes.push(random_genome(n_cuts, dim, rng));
        }
    }

    let evaluate_all = |gs: &[AngleGenome]| -> Vec<GenomeEval> {
        gs.par_iter().map(|g| evaluate_genome(g, ctx)).collect()
    };

    let evals = evaluate_all(&genomes);
    let mut pop: Vec<Individual> = genomes
        .into_iter()
        .zip(evals)
        .map(|(genome, eval)| Individual { genome, eval })
        .collect();

    let mut best_idx = argmin(&pop);
    let mut best = Individual {
        genome: pop[best_idx].genome.clone(),
        eval: pop[best_idx].eval,
    };

    // geometric annealing of the mutation step over the run
    let sigma_floor = cfg.mutation_sigma / 30.0;
    let decay = if cfg.generations > 1 {
        (sigma_floor / cfg.mutation_sigma).powf(1.0 / (cfg.generations - 1) as f64)
    } else {
        1.0
    };

    let genes_per_cut = dim * (dim - 1);
    for gen in 0..cfg.generations {
        let sigma_g = cfg.mutation_sigma * decay.powi(gen as i32);

        // elites first, then tournament offspring
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| pop[a].eval.fitness.total_cmp(&pop[b].eval.fitness));
        let mut next: Vec<AngleGenome> = order
            .iter()
            .take(cfg.elitism.min(pop.len()))
            .map(|&i| pop[i].genome.clone())
            .collect();

        while next.len() < cfg.population {
            let pa = tournament(&pop, rng);
            let pb = tournament(&pop, rng);
            let mut child = pop[pa].genome.clone();
            if rng.gen_bool(cfg.crossover_rate) {
                // uniform crossover over whole cuts: a hyperplane is the
                // genome's building block and gene-level mixing of two
                // unrelated planes yields junk cuts
                for c in 0..n_cuts {
                    if rng.gen_bool(0.5) {
                        let s = c * genes_per_cut;
                        child.angles[s..s + genes_per_cut]
                            .copy_from_slice(&pop[pb].genome.angles[s..s + genes_per_cut]);
                    }
                }
            }
            // per-offspring log-uniform step scale: coarse moves explore,
            // fine moves refine cuts on anisotropic boxes where even tiny
            // angle changes are geometrically large
            let scale = sigma_g * 10f64.powf(-3.0 * rng.gen::<f64>());
            let normal = Normal::new(0.0, scale).expect("positive std");
            for g in 0..n_genes {
                if rng.gen_bool(0.4) {
                    let j = g % (dim - 1);
                    let top = AngleGenome::angle_upper_bound(dim, j);
                    child.angles[g] = (child.angles[g] + normal.sample(rng)).clamp(0.0, top);
                }
            }
            next.push(child);
        }

        let evals = evaluate_all(&next);
        pop = next
            .into_iter()
            .zip(evals)
            .map(|(genome, eval)| Individual { genome, eval })
            .collect();

        best_idx = argmin(&pop);
        if pop[best_idx].eval.fitness < best.eval.fitness {
            best = Individual {
                genome: pop[best_idx].genome.clone(),
                eval: pop[best_idx].eval,
            };
        }
        log::info!(
            "n_c={} gen={} best_fitness={:.6e} gamma={:.6e} P={}",
            n_cuts,
            gen + 1,
            best.eval.fitness,
            best.eval.gamma,
            best.eval.p_count
        );
    }

    (best.genome, best.eval)
}

fn argmin(pop: &[Individual]) -> usize {
    pop.iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.eval.fitness.total_cmp(&b.eval.fitness))
        .map(|(i, _)| i)
        .unwrap()
}

fn tournament(pop: &[Individual], rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.gen_range(0..pop.len());
    for _ in 0..2 {
        let challenger = rng.gen_range(0..pop.len());
        if pop[challenger].eval.fitness < pop[winner].eval.fitness {
            winner = challenger;
        }
    }
    winner
}

/// One outer-iteration record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub n_cuts: usize,
    pub best_fitness: f64,
    pub gamma: f64,
    pub p_count: usize,
}

/// Result of the full escalation run.
pub struct SearchOutcome {
    pub model: PwaModel,
    pub gamma: f64,
    pub max_rel_err: f64,
    pub n_cuts: usize,
    pub p_count: usize,
    /// False when the iteration budget ran out before the tolerance.
    pub tolerance_met: bool,
    pub history: Vec<HistoryRecord>,
}

/// Approximates `f` (defined on the original frame) over the domain by the
/// iterative cut-based search: starts at one cut, optimizes angles, checks
/// the configured error metric against `tol_err`, and adds a cut per
/// iteration. Returns the best model found, flagged when the tolerance was
/// not reached within `max_iter` iterations.
pub fn approximate<F>(
    f: F,
    domain: &Domain,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    config.validate()?;
    let mut samples = fitting::sample_domain(domain, config.samples_n, config.seed);

    // fill values in the original frame, bailing on the first non-finite
    let first = f(&domain.to_original(&samples.points.row(0).transpose()));
    let out_dim = first.len();
    let mut values = DMatrix::zeros(samples.len(), out_dim);
    for k in 0..samples.len() {
        let xw = samples.points.row(k).transpose();
        let xo = domain.to_original(&xw);
        let v = if k == 0 { first.clone() } else { f(&xo) };
        if v.len() != out_dim || v.iter().any(|y| !y.is_finite()) {
            return Err(SearchError::EvaluationFailure {
                point: xo.iter().copied().collect(),
            });
        }
        for r in 0..out_dim {
            values[(k, r)] = v[r];
        }
    }
    samples.values = values;

    let sphere = enclosing_hypersphere(domain);
    let ctx = EvalContext {
        domain,
        sphere,
        samples: &samples,
        config,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut warm: Option<AngleGenome> = None;
    let mut best_overall: Option<(AngleGenome, GenomeEval, usize)> = None;

    let iter_cap = config.max_iter.min(config.nc_limit);
    for n_cuts in 1..=iter_cap {
        let (genome, eval) = ga_optimize(n_cuts, &ctx, &mut rng, warm.as_ref());
        history.push(HistoryRecord {
            n_cuts,
            best_fitness: eval.fitness,
            gamma: eval.gamma,
            p_count: eval.p_count,
        });
        let metric = match config.metric {
            Metric::Gamma => eval.gamma,
            Metric::MaxRelErr => eval.max_rel_err,
        };
        let improved = best_overall
            .as_ref()
            .map_or(true, |(_, b, _)| metric_of(b, config.metric) > metric);
        if improved {
            best_overall = Some((genome.clone(), eval, n_cuts));
        }
        if metric <= config.tol_err {
            let model = build_model(&genome, &ctx);
            return Ok(SearchOutcome {
                gamma: eval.gamma,
                max_rel_err: eval.max_rel_err,
                n_cuts: model.metadata.n_cuts,
                p_count: eval.p_count,
                tolerance_met: true,
                history,
                model,
            });
        }
        warm = Some(genome);
    }

    let (genome, eval, _) = best_overall.expect("at least one iteration ran");
    let model = build_model(&genome, &ctx);
    Ok(SearchOutcome {
        gamma: eval.gamma,
        max_rel_err: eval.max_rel_err,
        n_cuts: model.metadata.n_cuts,
        p_count: eval.p_count,
        tolerance_met: false,
        history,
        model,
    })
}

fn metric_of(eval: &GenomeEval, metric: Metric) -> f64 {
    match metric {
        Metric::Gamma => eval.gamma,
        Metric::MaxRelErr => eval.max_rel_err,
    }
}

fn build_model(genome: &AngleGenome, ctx: &EvalContext<'_>) -> PwaModel {
    let full = evaluate_genome_full(genome, ctx, true);
    PwaModel {
        domain: ctx.domain.clone(),
        metadata: ModelMetadata {
            seed: ctx.config.seed,
            n_cuts: full.hyperplanes.len(),
            p_count: full.eval.p_count,
            gamma: full.eval.gamma,
            max_rel_err: full.eval.max_rel_err,
        },
        hyperplanes: full.hyperplanes,
        sigma: full.sigma,
        adjacency: full.adjacency,
        regions: full.regions,
        modes: full.fit.modes,
        continuity: ctx.config.continuity,
    }
}
