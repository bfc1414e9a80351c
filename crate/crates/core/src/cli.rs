//! The `fmscale` command-line runner.
//!
//! Each subcommand reads an [`ExperimentConfig`], applies command-line
//! overrides, runs, and writes its outputs plus a `manifest.json` holding the
//! resolved config. Passing that manifest back as `--config` replays the run.
//! Wall time and thread count are kept under the manifest's `volatile` key;
//! every other output byte depends only on the config and seeds.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Algorithm, ConfigError, Emit, ExperimentConfig};
use crate::fields::AnalyticField;
use crate::integrators::{sample_terminals, Method, ParticleBatch, StepperConfig};
use crate::metrics::{batch_diversity, energy_distance, group_diversities, pareto_frontier, FrontierPoint};
use crate::rng::RngStream;
use crate::search::{noise_search, random_search, rs_plus_ns, SearchBudget, SearchOutcome, TwoStageBudget};
use crate::state::State;
use crate::verify::{verify_math, VerifyReport};

#[derive(Parser, Debug)]
#[command(name = "fmscale", version, about = "Verifier-guided search for flow-matching samplers on analytic targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw terminal samples with the configured stepper.
    Sample(RunArgs),
    /// Run the configured search algorithm for every seed and scaling factor.
    Search(RunArgs),
    /// Sweep noise magnitudes per method and extract the diversity/quality frontier.
    Pareto(RunArgs),
    /// Check the numerical identities; exits 1 if any suite fails.
    VerifyMath(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Root seed; repeat to run several. Replaces the config's seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory. Replaces the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of csv,json,plotdata.
    #[arg(long)]
    emit: Option<String>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
    /// The command ran but a check failed.
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::CheckFailed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn load(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(e) = &args.emit {
        cfg.emit = Emit::parse_list(e)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> CliResult<()> {
    let (args, f): (RunArgs, fn(&ExperimentConfig) -> CliResult<RunRecord>) = match cmd {
        Command::Sample(a) => (a, cmd_sample),
        Command::Search(a) => (a, cmd_search),
        Command::Pareto(a) => (a, cmd_pareto),
        Command::VerifyMath(a) => (a, cmd_verify_math),
    };
    let cfg = load(&args)?;
    let started = Instant::now();
    let record = match args.threads {
        Some(0) => return Err(ConfigError::invalid("threads", "must be at least 1").into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(|| f(&cfg))?,
        None => f(&cfg)?,
    };
    write_manifest(&cfg, &record, started.elapsed().as_secs_f64(), args.threads.unwrap_or_else(rayon::current_num_threads))?;
    match record.failure {
        Some(m) => Err(CliError::CheckFailed(m)),
        None => Ok(()),
    }
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub command: &'static str,
    pub default_method: Option<Method>,
    pub outputs: Vec<String>,
    pub failure: Option<String>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn out_dir(cfg: &ExperimentConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    Ok(&cfg.output_dir)
}

fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>], record: &mut RunRecord) -> CliResult<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    record.outputs.push(name.to_string());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, record: &mut RunRecord) -> CliResult<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    record.outputs.push(name.to_string());
    Ok(())
}

fn write_manifest(cfg: &ExperimentConfig, record: &RunRecord, wall: f64, threads: usize) -> CliResult<()> {
    let resolved = cfg.resolved(record.default_method.unwrap_or(Method::Ode));
    let manifest = json!({
        "tool": "fmscale",
        "version": crate::VERSION,
        "command": record.command,
        "config": resolved,
        "outputs": record.outputs,
        "volatile": { "wall_time_seconds": wall, "threads": threads },
    });
    let mut r = RunRecord::default();
    write_json(out_dir(cfg)?, "manifest.json", &manifest, &mut r)
}

fn coord_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x_{i}")).collect()
}

/// Terminal samples per seed: `(seed, group, x)`, ordered by seed, group, particle.
pub fn sample_rows(cfg: &ExperimentConfig) -> CliResult<Vec<(u64, u64, Vec<f64>)>> {
    let target = cfg.target();
    let field = AnalyticField::new(target.clone());
    let stepper = cfg.stepper.resolve(Method::Ode)?;
    let cells: Vec<(u64, u64)> =
        cfg.seeds.iter().flat_map(|&s| (0..cfg.sample.n_groups as u64).map(move |g| (s, g))).collect();
    let out = cells
        .par_iter()
        .map(|&(seed, g)| {
            let rng = RngStream::new(seed).child(g);
            let x0 = rng.child(0).standard_normal(target.dim());
            let batch = ParticleBatch::replicate(&x0, cfg.sample.group_size, 0.0, g)?;
            let xs = sample_terminals(&batch, &stepper, &field, &rng.child(1))?;
            Ok(xs.into_iter().map(|x| (seed, g, x)).collect::<Vec<_>>())
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(out.into_iter().flatten().collect())
}

pub fn cmd_sample(cfg: &ExperimentConfig) -> CliResult<RunRecord> {
    let mut record = RunRecord { command: "sample", default_method: Some(Method::Ode), ..Default::default() };
    let rows = sample_rows(cfg)?;
    let dir = out_dir(cfg)?;
    log::info!("sample: {} terminal states", rows.len());
    if cfg.emits(Emit::Csv) {
        let mut header = coord_header(cfg.target().dim());
        header.extend(["group_id".to_string(), "seed".to_string()]);
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|(s, g, x)| x.iter().map(|&v| fmt_f(v)).chain([g.to_string(), s.to_string()]).collect())
            .collect();
        write_csv(dir, "samples.csv", &header, &body, &mut record)?;
    }
    Ok(record)
}

/// One (seed, scaling factor) cell of a search run.
#[derive(Clone, Debug, Serialize)]
pub struct SearchRun {
    pub algorithm: &'static str,
    pub n: usize,
    pub seed: u64,
    pub outcome: SearchOutcome,
}

/// Runs one cell. All scaling factors of a seed share the root stream.
pub fn search_cell(cfg: &ExperimentConfig, seed: u64, n: usize) -> crate::Result<SearchOutcome> {
    let target = cfg.target();
    let field = AnalyticField::new(target.clone());
    let verifier = cfg.search.verifier.build(&target).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let s = &cfg.search;
    let stochastic = cfg.stepper.resolve(Method::DmfmOde).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let ode = StepperConfig::ode(stochastic.n_steps);
    let rng = RngStream::new(seed);
    match s.algorithm {
        Algorithm::RandomSearch => random_search(n, s.keep, &ode, &field, &verifier, &rng),
        Algorithm::NoiseSearch => {
            let x0 = State::new(rng.child(0).child(0).standard_normal(target.dim()), 0.0)?;
            let budget = SearchBudget::new(n, s.keep, s.round_start_times.clone())?;
            noise_search(&x0, &budget, &stochastic, &field, &verifier, &rng.child(1))
        }
        Algorithm::RsPlusNs => {
            let budget = TwoStageBudget {
                total: n as f64 * s.rs_ns_budget_per_factor,
                split: s.split,
                keep: s.keep,
                round_start_times: s.round_start_times.clone(),
            };
            rs_plus_ns(&budget, &ode, &stochastic, &field, &verifier, &rng)
        }
    }
}

pub fn search_runs(cfg: &ExperimentConfig) -> CliResult<Vec<SearchRun>> {
    let cells: Vec<(u64, usize)> =
        cfg.seeds.iter().flat_map(|&s| cfg.search.scaling_factors.iter().map(move |&n| (s, n))).collect();
    let algorithm = cfg.search.algorithm.name();
    Ok(cells
        .par_iter()
        .map(|&(seed, n)| search_cell(cfg, seed, n).map(|outcome| SearchRun { algorithm, n, seed, outcome }))
        .collect::<crate::Result<Vec<_>>>()?)
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingSummary {
    pub n: usize,
    pub runs: usize,
    pub mean: f64,
    pub se: f64,
    pub mean_compute_units: f64,
}

pub fn summarize_search(cfg: &ExperimentConfig, runs: &[SearchRun]) -> Vec<ScalingSummary> {
    cfg.search
        .scaling_factors
        .iter()
        .map(|&n| {
            let cell: Vec<&SearchRun> = runs.iter().filter(|r| r.n == n).collect();
            let scores: Vec<f64> = cell.iter().map(|r| r.outcome.best().score).collect();
            let (mean, se) = mean_se(&scores);
            let cu = cell.iter().map(|r| r.outcome.compute_units).sum::<f64>() / cell.len() as f64;
            ScalingSummary { n, runs: cell.len(), mean, se, mean_compute_units: cu }
        })
        .collect()
}

pub fn cmd_search(cfg: &ExperimentConfig) -> CliResult<RunRecord> {
    let default_method = if cfg.search.algorithm == Algorithm::RandomSearch { Method::Ode } else { Method::DmfmOde };
    let mut record = RunRecord { command: "search", default_method: Some(default_method), ..Default::default() };
    let runs = search_runs(cfg)?;
    let dir = out_dir(cfg)?;
    log::info!("search: {} runs of {}", runs.len(), cfg.search.algorithm.name());
    if cfg.emits(Emit::Csv) {
        let mut header: Vec<String> =
            ["algorithm", "n", "seed", "final_score", "compute_units"].iter().map(|s| s.to_string()).collect();
        header.extend(coord_header(cfg.target().dim()));
        let body: Vec<Vec<String>> = runs
            .iter()
            .map(|r| {
                let best = r.outcome.best();
                [r.algorithm.to_string(), r.n.to_string(), r.seed.to_string(), fmt_f(best.score), fmt_f(r.outcome.compute_units)]
                    .into_iter()
                    .chain(best.x.iter().map(|&v| fmt_f(v)))
                    .collect()
            })
            .collect();
        write_csv(dir, "search_runs.csv", &header, &body, &mut record)?;
    }
    if cfg.emits(Emit::Json) {
        let summary = json!({
            "algorithm": cfg.search.algorithm.name(),
            "verifier": cfg.search.verifier,
            "seeds": cfg.seeds.len(),
            "per_n": summarize_search(cfg, &runs),
        });
        write_json(dir, "search_summary.json", &summary, &mut record)?;
    }
    Ok(record)
}

/// A frontier point with its Monte Carlo standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct ParetoCell {
    pub point: FrontierPoint,
    pub diversity_se: f64,
    pub quality_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParetoStudy {
    pub cells: Vec<ParetoCell>,
    pub frontier: Vec<FrontierPoint>,
    /// Some DMFM point is not dominated by any point of the other methods.
    pub dmfm_extends_frontier: bool,
}

/// Groups of terminals for every (method, magnitude) cell. Group `g` of seed
/// `s` starts from the noise at `RngStream::new(s).child(0).child(g).child(0)`
/// for all methods, so magnitude 0 gives the same samples everywhere.
pub fn pareto_study(cfg: &ExperimentConfig) -> CliResult<ParetoStudy> {
    let target = cfg.target();
    let field = AnalyticField::new(target.clone());
    let p = &cfg.pareto;
    let d = target.dim();
    let references: Vec<Vec<Vec<f64>>> =
        cfg.seeds.iter().map(|&s| target.sample(p.reference_samples, &RngStream::new(s).child(1))).collect();

    let mut specs = Vec::new();
    for &m in &p.methods {
        for &mult in &p.multipliers {
            let mut spec = cfg.stepper.clone();
            spec.method = Some(m);
            spec.noise_scale = Some(mult * p.reference_scale(m));
            specs.push((m, spec.resolve(m)?));
        }
    }
    let cells = specs
        .par_iter()
        .map(|(m, stepper)| {
            let mut groups = Vec::new();
            let mut qualities = Vec::new();
            for (si, &seed) in cfg.seeds.iter().enumerate() {
                let base = RngStream::new(seed).child(0);
                let per_seed = (0..p.n_groups as u64)
                    .into_par_iter()
                    .map(|g| {
                        let rng = base.child(g);
                        let batch = ParticleBatch::replicate(&rng.child(0).standard_normal(d), p.group_size, 0.0, g)?;
                        sample_terminals(&batch, stepper, &field, &rng.child(1))
                    })
                    .collect::<crate::Result<Vec<_>>>()?;
                let pooled: Vec<Vec<f64>> = per_seed.iter().flatten().cloned().collect();
                qualities.push(-energy_distance(&pooled, &references[si])?);
                groups.extend(per_seed);
            }
            let divs = group_diversities(&groups)?;
            let (_, diversity_se) = mean_se(&divs);
            let (quality, quality_se) = mean_se(&qualities);
            Ok(ParetoCell {
                point: FrontierPoint {
                    method: m.name().to_string(),
                    noise_magnitude: stepper.noise_scale,
                    diversity: batch_diversity(&groups)?,
                    quality,
                    n_samples: groups.iter().map(Vec::len).sum(),
                },
                diversity_se,
                quality_se,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;

    let points: Vec<FrontierPoint> = cells.iter().map(|c| c.point.clone()).collect();
    let frontier = pareto_frontier(&points);
    let dmfm = Method::DmfmOde.name();
    let others: Vec<&FrontierPoint> = points.iter().filter(|q| q.method != dmfm).collect();
    let dmfm_extends_frontier = points.iter().filter(|q| q.method == dmfm).any(|q| {
        !others.iter().any(|o| {
            o.diversity >= q.diversity && o.quality >= q.quality && (o.diversity > q.diversity || o.quality > q.quality)
        })
    });
    Ok(ParetoStudy { cells, frontier, dmfm_extends_frontier })
}

fn point_row(p: &FrontierPoint) -> Vec<String> {
    vec![p.method.clone(), fmt_f(p.noise_magnitude), fmt_f(p.diversity), fmt_f(p.quality), p.n_samples.to_string()]
}

pub fn cmd_pareto(cfg: &ExperimentConfig) -> CliResult<RunRecord> {
    let mut record = RunRecord { command: "pareto", default_method: Some(Method::Ode), ..Default::default() };
    let study = pareto_study(cfg)?;
    let dir = out_dir(cfg)?;
    log::info!("pareto: {} points, {} on the frontier", study.cells.len(), study.frontier.len());
    let header: Vec<String> =
        ["method", "noise_magnitude", "diversity", "quality", "n_samples"].iter().map(|s| s.to_string()).collect();
    if cfg.emits(Emit::Csv) {
        let rows: Vec<Vec<String>> = study.cells.iter().map(|c| point_row(&c.point)).collect();
        write_csv(dir, "pareto_points.csv", &header, &rows, &mut record)?;
        let rows: Vec<Vec<String>> = study.frontier.iter().map(point_row).collect();
        write_csv(dir, "pareto_frontier.csv", &header, &rows, &mut record)?;
    }
    if cfg.emits(Emit::Plotdata) {
        let header: Vec<String> = ["x", "y", "series"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = study
            .cells
            .iter()
            .map(|c| vec![fmt_f(c.point.diversity), fmt_f(c.point.quality), c.point.method.clone()])
            .chain(study.frontier.iter().map(|p| vec![fmt_f(p.diversity), fmt_f(p.quality), "frontier".to_string()]))
            .collect();
        write_csv(dir, "pareto_plotdata.csv", &header, &rows, &mut record)?;
    }
    if cfg.emits(Emit::Json) {
        write_json(dir, "pareto_summary.json", &study, &mut record)?;
    }
    Ok(record)
}

pub fn cmd_verify_math(cfg: &ExperimentConfig) -> CliResult<RunRecord> {
    let mut record = RunRecord { command: "verify-math", default_method: Some(Method::Ode), ..Default::default() };
    let report: VerifyReport = verify_math(&cfg.target(), &cfg.verify.to_config(cfg.seeds[0]));
    println!("{report}");
    if cfg.emits(Emit::Json) {
        write_json(out_dir(cfg)?, "verify_report.json", &report, &mut record)?;
    }
    if !report.passed {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        record.failure = Some(format!("failed suites: {}", failed.join(", ")));
    }
    Ok(record)
}
