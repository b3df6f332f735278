//! Command-line front end for the cut-based PWA approximation pipeline.
//!
//! Subcommands: `approx` (fit a model), `eval` (evaluate a saved model),
//! `validate` (re-check a saved model), `chambers` (inspect a cut
//! arrangement), `bench` (run a builtin benchmark at the standard
//! tolerance levels). Exit codes are stable API: 0 ok, 1 usage/schema
//! errors, 2 evaluation failure, 3 tolerance not met, 4 validation
//! failure.

use clap::{Args, Parser, Subcommand};
use pwacut::nalgebra::DVector;
use pwacut::expr::{self, Benchmark};
use pwacut::geometry::Domain;
use pwacut::model::{ModelError, PwaModel};
use pwacut::partition::{self, ChamberDiagnostics};
use pwacut::search::{self, Metric, SearchConfig, SearchError};
use pwacut::Hyperplane;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_EVAL: u8 = 2;
const EXIT_TOL: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "pwacut", version, about = "Cut-based piecewise-affine approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate a function by an iteratively refined PWA model.
    Approx(ApproxArgs),
    /// Evaluate a saved model at a point.
    Eval(EvalArgs),
    /// Re-check a saved model's partition and continuity.
    Validate(ValidateArgs),
    /// Enumerate the chambers of an explicit cut arrangement.
    Chambers(ChambersArgs),
    /// Run a builtin benchmark at the 10% / 5% / 2.5% tolerance levels.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FunctionSource {
    /// Expression over x1..xn, u1..um (requires --domain).
    #[arg(long, conflicts_with = "bench")]
    func: Option<String>,
    /// Builtin benchmark name (sine2d, dubins, vehicle_vx).
    #[arg(long)]
    bench: Option<String>,
    /// Box as comma-separated `name=lo:hi`, names x1..xn then u1..um.
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Args)]
struct SearchFlags {
    /// Error tolerance for the stopping test.
    #[arg(long)]
    tol: Option<f64>,
    /// Stopping metric: `gamma` (mean relative squared error) or `max`.
    #[arg(long, default_value = "gamma")]
    metric: String,
    /// Impose the continuity constraint across region facets.
    #[arg(long)]
    continuity: bool,
    /// Region-count weight in the search fitness.
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 60)]
    generations: usize,
    /// Outer iteration budget (cuts added one per iteration).
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    /// Hard cap on cuts per arrangement.
    #[arg(long, default_value_t = 20)]
    nc_limit: usize,
}

impl SearchFlags {
    fn to_config(&self, tol: f64) -> Result<SearchConfig, String> {
        let metric = match self.metric.as_str() {
            "gamma" => Metric::Gamma,
            "max" => Metric::MaxRelErr,
            other => return Err(format!("unknown metric `{other}` (use `max` or `gamma`)")),
        };
        Ok(SearchConfig {
            lambda: self.lambda,
            population: self.population,
            generations: self.generations,
            seed: self.seed,
            tol_err: tol,
            max_iter: self.max_iter,
            samples_n: self.samples,
            continuity: self.continuity,
            nc_limit: self.nc_limit,
            metric,
            ..SearchConfig::default()
        })
    }
}

#[derive(Args)]
struct ApproxArgs {
    #[command(flatten)]
    source: FunctionSource,
    #[command(flatten)]
    search: SearchFlags,
    /// Model JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-sample error report (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Optional grid of F, f and region ids (CSV; d <= 2).
    #[arg(long)]
    plotdata: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated point coordinates (original frame).
    #[arg(long)]
    point: String,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Optional function source to recompute the error metrics.
    #[command(flatten)]
    source: FunctionSource,
    #[arg(long, default_value_t = 10000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ChambersArgs {
    /// JSON file with {"hyperplanes": [[h11, ..., h1d], ...]}.
    #[arg(long)]
    cuts: PathBuf,
    #[arg(long)]
    domain: String,
    #[arg(long, default_value_t = 20)]
    nc_limit: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Builtin benchmark name.
    #[arg(long)]
    bench: String,
    #[command(flatten)]
    search: SearchFlags,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PWACUT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let code = match cli.command {
        Command::Approx(args) => run_approx(&args),
        Command::Eval(args) => run_eval(&args),
        Command::Validate(args) => run_validate(&args),
        Command::Chambers(args) => run_chambers(&args),
        Command::Bench(args) => run_bench(&args),
    };
    ExitCode::from(code)
}

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

/// Parses `x1=-2:2,u1=0:1` into a domain plus the (n_states, n_inputs)
/// split; names must appear as x1..xn followed by u1..um.
fn parse_domain_spec(spec: &str) -> Result<(Domain, (usize, usize)), String> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut n_states = 0usize;
    let mut n_inputs = 0usize;
    for (i, entry) in spec.split(',').enumerate() {
        let (name, range) = entry
            .split_once('=')
            .ok_or_else(|| format!("entry `{entry}` is not of the form name=lo:hi"))?;
        let name = name.trim();
        let expect_state = format!("x{}", n_states + 1);
        let expect_input = format!("u{}", n_inputs + 1);
        if name == expect_state && n_inputs == 0 {
            n_states += 1;
        } else if name == expect_input {
            n_inputs += 1;
        } else {
            return Err(format!(
                "entry {} must be named `{expect_state}`{} (found `{name}`); \
                 states come first, then inputs, in index order",
                i + 1,
                if n_inputs == 0 { format!(" or `{expect_input}`") } else { String::new() },
            ));
        }
        let (lo, hi) = range
            .split_once(':')
            .ok_or_else(|| format!("range `{range}` is not of the form lo:hi"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number `{lo}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number `{hi}`"))?;
        lower.push(lo);
        upper.push(hi);
    }
    if lower.is_empty() {
        return Err("domain spec is empty".into());
    }
    let domain = Domain::new(
        DVector::from_vec(lower),
        DVector::from_vec(upper),
    )
    .map_err(|e| e.to_string())?;
    Ok((domain, (n_states, n_inputs)))
}

/// The function to approximate, from either source.
struct ResolvedFunction {
    benchmark: Benchmark,
    /// Axis labels for reports: x1..xn then u1..um.
    labels: Vec<String>,
}

fn resolve_function(source: &FunctionSource) -> Result<ResolvedFunction, String> {
    let benchmark = match (&source.func, &source.bench) {
        (Some(text), None) => {
            let spec = source
                .domain
                .as_ref()
                .ok_or("--func requires --domain")?;
            let (domain, dims) = parse_domain_spec(spec)?;
            let expr = expr::parse(text, dims).map_err(|e| e.to_string())?;
            Benchmark {
                name: "custom",
                exprs: vec![expr],
                domain,
                dims,
            }
        }
        (None, Some(name)) => {
            let mut b = expr::builtin(name).map_err(|e| e.to_string())?;
            if let Some(spec) = &source.domain {
                let (domain, dims) = parse_domain_spec(spec)?;
                if dims != b.dims {
                    return Err(format!(
                        "domain spec declares dims {dims:?} but `{name}` needs {:?}",
                        b.dims
                    ));
                }
                b.domain = domain;
            }
            b
        }
        _ => return Err("exactly one of --func or --bench is required".into()),
    };
    let labels = (1..=benchmark.dims.0)
        .map(|i| format!("x{i}"))
        .chain((1..=benchmark.dims.1).map(|i| format!("u{i}")))
        .collect();
    Ok(ResolvedFunction { benchmark, labels })
}

fn run_approx(args: &ApproxArgs) -> u8 {
    let resolved = match resolve_function(&args.source) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let Some(tol) = args.search.tol else {
        return fail(EXIT_USAGE, "approx requires --tol");
    };
    let config = match args.search.to_config(tol) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };

    let bench = &resolved.benchmark;
    let func = |x: &DVector<f64>| {
        bench
            .eval(x)
            .unwrap_or_else(|_| DVector::from_element(bench.out_dim(), f64::NAN))
    };
    let outcome = match search::approximate(func, &bench.domain, &config) {
        Ok(o) => o,
        Err(e @ SearchError::EvaluationFailure { .. }) => return fail(EXIT_EVAL, e),
        Err(e) => return fail(EXIT_USAGE, e),
    };

    if let Err(e) = fs::write(&args.out, outcome.model.to_json_bytes()) {
        return fail(EXIT_USAGE, format!("writing {}: {e}", args.out.display()));
    }
    if let Some(path) = &args.report {
        if let Err(e) = write_report(path, &outcome.model, bench, &resolved.labels, &config) {
            return fail(EXIT_USAGE, e);
        }
    }
    if let Some(path) = &args.plotdata {
        if let Err(e) = write_plotdata(path, &outcome.model, bench, &resolved.labels) {
            return fail(EXIT_USAGE, e);
        }
    }

    println!(
        "{}: n_c={} P={} gamma={:.6e} max_rel_err={:.6e} ({})",
        if outcome.tolerance_met { "converged" } else { "tolerance not met" },
        outcome.n_cuts,
        outcome.p_count,
        outcome.gamma,
        outcome.max_rel_err,
        args.out.display(),
    );
    if outcome.tolerance_met {
        EXIT_OK
    } else {
        EXIT_TOL
    }
}

fn write_report(
    path: &Path,
    model: &PwaModel,
    bench: &Benchmark,
    labels: &[String],
    config: &SearchConfig,
) -> Result<(), String> {
    let samples = pwacut::fitting::sample_domain(&bench.domain, config.samples_n, config.seed);
    let n_out = bench.out_dim();
    let mut csv = String::from("index");
    for l in labels {
        csv.push(',');
        csv.push_str(l);
    }
    for r in 1..=n_out {
        csv.push_str(&format!(",F{r}"));
    }
    for r in 1..=n_out {
        csv.push_str(&format!(",f{r}"));
    }
    csv.push_str(",rel_err\n");
    for k in 0..samples.len() {
        let xw = samples.points.row(k).transpose();
        let xo = bench.domain.to_original(&xw);
        let fv = bench.eval(&xo).map_err(|e| e.to_string())?;
        let mv = model.evaluate(&xo).map_err(|e| e.to_string())?;
        let rel = (&fv - &mv).norm() / (fv.norm_squared() + 1.0).sqrt();
        csv.push_str(&k.to_string());
        for v in xo.iter() {
            csv.push_str(&format!(",{v}"));
        }
        for v in fv.iter() {
            csv.push_str(&format!(",{v}"));
        }
        for v in mv.iter() {
            csv.push_str(&format!(",{v}"));
        }
        csv.push_str(&format!(",{rel}\n"));
    }
    fs::write(path, csv).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn write_plotdata(
    path: &Path,
    model: &PwaModel,
    bench: &Benchmark,
    labels: &[String],
) -> Result<(), String> {
    let d = bench.domain.dim();
    let n_out = bench.out_dim();
    let steps = match d {
        1 => 1001usize,
        2 => 101usize,
        _ => return Err("plot data is only produced for 1- or 2-dimensional domains".into()),
    };
    let lower = bench.domain.lower();
    let upper = bench.domain.upper();
    let axis = |j: usize, i: usize| lower[j] + (upper[j] - lower[j]) * i as f64 / (steps - 1) as f64;

    let mut csv = labels.join(",");
    for r in 1..=n_out {
        csv.push_str(&format!(",F{r}"));
    }
    for r in 1..=n_out {
        csv.push_str(&format!(",f{r}"));
    }
    csv.push_str(",region\n");

    let mut emit = |xo: DVector<f64>| -> Result<(), String> {
        let fv = bench.eval(&xo).map_err(|e| e.to_string())?;
        let mv = model.evaluate(&xo).map_err(|e| e.to_string())?;
        let region = model.locate_working(&bench.domain.to_working(&xo));
        let mut row: Vec<String> = xo.iter().map(|v| format!("{v}")).collect();
        row.extend(fv.iter().map(|v| format!("{v}")));
        row.extend(mv.iter().map(|v| format!("{v}")));
        row.push(region.to_string());
        csv.push_str(&row.join(","));
        csv.push('\n');
        Ok(())
    };

    if d == 1 {
        for i in 0..steps {
            emit(DVector::from_row_slice(&[axis(0, i)]))?;
        }
    } else {
        for i in 0..steps {
            for j in 0..steps {
                emit(DVector::from_row_slice(&[axis(0, i), axis(1, j)]))?;
            }
        }
    }
    fs::write(path, csv).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<PwaModel, String> {
    let bytes = fs::read(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    PwaModel::from_json_bytes(&bytes).map_err(|e| e.to_string())
}

fn run_eval(args: &EvalArgs) -> u8 {
    let model = match load_model(&args.model) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let coords: Result<Vec<f64>, _> = args
        .point
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let coords = match coords {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, format!("bad --point: {e}")),
    };
    if coords.len() != model.dim() {
        return fail(
            EXIT_USAGE,
            format!("--point has {} coordinates, model needs {}", coords.len(), model.dim()),
        );
    }
    match model.evaluate(&DVector::from_vec(coords)) {
        Ok(y) => {
            let parts: Vec<String> = y.iter().map(|v| format!("{v}")).collect();
            println!("{}", parts.join(" "));
            EXIT_OK
        }
        Err(e @ ModelError::OutOfDomain { .. }) => fail(EXIT_EVAL, e),
        Err(e) => fail(EXIT_USAGE, e),
    }
}

fn run_validate(args: &ValidateArgs) -> u8 {
    let model = match load_model(&args.model) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let func = if args.source.func.is_some() || args.source.bench.is_some() {
        match resolve_function(&args.source) {
            Ok(r) => Some(r.benchmark),
            Err(e) => return fail(EXIT_USAGE, e),
        }
    } else {
        None
    };
    let f =
        func.as_ref().map(|b| move |x: &DVector<f64>| b.eval(x).unwrap_or_else(|_| DVector::from_element(b.out_dim(), f64::NAN)));
    let report = model.validate(
        args.samples,
        args.seed,
        f.as_ref().map(|g| g as &dyn Fn(&DVector<f64>) -> DVector<f64>),
    );

    println!("regions: {}", model.p_count());
    println!(
        "per-region samples: min={} max={}",
        report.per_region_samples.iter().min().unwrap_or(&0),
        report.per_region_samples.iter().max().unwrap_or(&0)
    );
    println!("nonempty (LP): {}", report.lp_nonempty.iter().all(|&b| b));
    println!("multi-match samples: {}", report.multi_match_samples);
    println!("unmatched samples: {}", report.unmatched_samples);
    if let Some(c) = &report.continuity {
        println!(
            "continuity residuals: jacobian={:.3e} offset={:.3e}",
            c.max_jac_residual, c.max_offset_residual
        );
    }
    if let Some((gamma, max_rel)) = report.recomputed {
        println!("recomputed: gamma={gamma:.6e} max_rel_err={max_rel:.6e}");
    }
    if report.passed {
        println!("validation: PASS");
        EXIT_OK
    } else {
        for finding in &report.findings {
            println!("finding: {finding}");
        }
        println!("validation: FAIL");
        EXIT_VALIDATION
    }
}

fn run_chambers(args: &ChambersArgs) -> u8 {
    let (domain, _) = match parse_domain_spec(&args.domain) {
        Ok(d) => d,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let bytes = match fs::read(&args.cuts) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_USAGE, format!("reading {}: {e}", args.cuts.display())),
    };
    let json: serde_json::Value = match serde_json::from_slice(&bytes) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_USAGE, format!("cuts file: {e}")),
    };
    let Some(rows) = json.get("hyperplanes").and_then(|v| v.as_array()) else {
        return fail(EXIT_USAGE, "cuts file needs a `hyperplanes` array");
    };
    let mut hyperplanes = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let Some(vals) = row.as_array() else {
            return fail(EXIT_USAGE, format!("hyperplane {i} is not an array"));
        };
        let coeffs: Option<Vec<f64>> = vals.iter().map(|v| v.as_f64()).collect();
        let Some(coeffs) = coeffs else {
            return fail(EXIT_USAGE, format!("hyperplane {i} has non-numeric entries"));
        };
        if coeffs.len() != domain.dim() {
            return fail(
                EXIT_USAGE,
                format!("hyperplane {i} has {} coefficients, domain is {}-dimensional", coeffs.len(), domain.dim()),
            );
        }
        hyperplanes.push(Hyperplane::new(DVector::from_vec(coeffs)));
    }
    let sigma = match partition::chambers(&hyperplanes, &domain, args.nc_limit) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let adjacency = partition::adjacency(&sigma);
    let diag = ChamberDiagnostics::new(&sigma, &adjacency);
    println!("{}", serde_json::to_string_pretty(&diag).expect("diagnostics serialize"));
    EXIT_OK
}

fn run_bench(args: &BenchArgs) -> u8 {
    let bench = match expr::builtin(&args.bench) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let levels = [0.10, 0.05, 0.025];
    println!(
        "benchmark {} (metric {}, continuity {})",
        bench.name, args.search.metric, args.search.continuity
    );
    println!("{:>9} | {:>4} | {:>4} | {:>12} | {:>12} | met", "tol", "n_c", "P", "gamma", "max_rel_err");
    let mut all_met = true;
    for tol in levels {
        let config = match args.search.to_config(tol) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_USAGE, e),
        };
        let func = |x: &DVector<f64>| {
            bench
                .eval(x)
                .unwrap_or_else(|_| DVector::from_element(bench.out_dim(), f64::NAN))
        };
        let outcome = match search::approximate(func, &bench.domain, &config) {
            Ok(o) => o,
            Err(e @ SearchError::EvaluationFailure { .. }) => return fail(EXIT_EVAL, e),
            Err(e) => return fail(EXIT_USAGE, e),
        };
        all_met &= outcome.tolerance_met;
        println!(
            "{:>9} | {:>4} | {:>4} | {:>12.4e} | {:>12.4e} | {}",
            format!("{:.1}%", tol * 100.0),
            outcome.n_cuts,
            outcome.p_count,
            outcome.gamma,
            outcome.max_rel_err,
            if outcome.tolerance_met { "yes" } else { "no" },
        );
    }
    if all_met {
        EXIT_OK
    } else {
        EXIT_TOL
    }
}
