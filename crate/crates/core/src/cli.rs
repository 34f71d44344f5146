//! Command-line front end.
//!
//! Every value flag may also be given in a JSON config file (`--config`),
//! keyed by the long flag name (`"lambda-h": -2`, `"schemes": ["em-dsl"]`).
//! Flags override the file, which overrides built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::experiments::{
    self, ExperimentConfig, ExperimentError, Functional, WeakReference,
};
use crate::model::ModelError;
use crate::problems::{self, Problem};
use crate::schemes::{Scheme, SchemeError};
use crate::stability::{
    self, BoundaryStatus, RegionKind, RegionProblem, RegionScan, SchemeKind, StabilityError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::Noise(_) => CliError::Usage(e.to_string()),
            ExperimentError::Model(ModelError::Grid(_)) => CliError::Usage(e.to_string()),
            ExperimentError::Divergence { .. } => CliError::Divergence(e.to_string()),
            ExperimentError::Scheme(ref s) if s.is_divergence() => CliError::Divergence(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::EmptyGrid | StabilityError::Parameter(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        ExperimentError::from(e).into()
    }
}

#[derive(Debug, Parser)]
#[command(name = "srkl", version, about = "Stochastic Runge-Kutta Lawson schemes: convergence, stability and moment experiments")]
pub struct Cli {
    /// JSON file with default values for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write CSV here instead of stdout
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strong or weak convergence tables
    Convergence {
        #[command(subcommand)]
        kind: ConvergenceKind,
    },
    /// Mean-square stability of the linear test systems
    Stability {
        #[command(subcommand)]
        cmd: StabilityCmd,
    },
    /// Monte Carlo second-moment evolution
    Simulate(SimulateArgs),
}

#[derive(Debug, Subcommand)]
pub enum ConvergenceKind {
    Strong(ConvergenceArgs),
    Weak(ConvergenceArgs),
}

#[derive(Debug, Subcommand)]
pub enum StabilityCmd {
    /// Boundary sigma^2 h per lambda h
    Region(RegionArgs),
    /// Spectral radii at one point
    Point(PointArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ProblemArgs {
    /// oscillator | gbm | damped-oscillator | orthogonal
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<String>,
    #[arg(long)]
    pub sigma2: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega2: Option<String>,
    #[arg(long = "t-end")]
    pub t_end: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Comma-separated scheme names, e.g. em-dsl,platen-dsl
    #[arg(long)]
    pub schemes: Option<String>,
    /// Step sizes: list or 2^-a..2^-b
    #[arg(long)]
    pub h: Option<String>,
    #[arg(long)]
    pub batches: Option<String>,
    /// Paths per batch
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub reference: Option<String>,
    /// Reference step is h_min / refinement
    #[arg(long)]
    pub refinement: Option<String>,
    /// x1^2 | norm2 | x1
    #[arg(long)]
    pub functional: Option<String>,
    /// auto | analytic | exact-path | fine-step
    #[arg(long = "weak-reference")]
    pub weak_reference: Option<String>,
    /// Record wall-clock time per batch
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct StabilityProblemArgs {
    /// orthogonal | oscillator
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long = "b-h", allow_hyphen_values = true)]
    pub b_h: Option<String>,
    #[arg(long = "omega2-h", allow_hyphen_values = true)]
    pub omega2_h: Option<String>,
    /// Comma-separated: em_dsl, platen_dsl, implicit_platen_printed, implicit_platen_derived
    #[arg(long)]
    pub kinds: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RegionArgs {
    #[command(flatten)]
    pub problem: StabilityProblemArgs,
    #[arg(long = "lambda-min", allow_hyphen_values = true)]
    pub lambda_min: Option<String>,
    #[arg(long = "lambda-max", allow_hyphen_values = true)]
    pub lambda_max: Option<String>,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long = "sigma2-max")]
    pub sigma2_max: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PointArgs {
    #[command(flatten)]
    pub problem: StabilityProblemArgs,
    #[arg(long = "lambda-h", allow_hyphen_values = true)]
    pub lambda_h: Option<String>,
    #[arg(long = "sigma2-h")]
    pub sigma2_h: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub schemes: Option<String>,
    #[arg(long)]
    pub h: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

/// Numbers with a little syntax: `pi`, `10pi`, `10*pi`, `2^-3`, `-2.5`.
pub fn parse_number(s: &str) -> Result<f64, CliError> {
    let t = s.trim();
    let bad = || CliError::Usage(format!("not a number: {s:?}"));
    if let Some(rest) = t.strip_suffix("pi") {
        let rest = rest.trim_end_matches('*').trim();
        let k = match rest {
            "" => 1.0,
            "-" => -1.0,
            r => parse_number(r).map_err(|_| bad())?,
        };
        return Ok(k * std::f64::consts::PI);
    }
    if let Some((base, exp)) = t.split_once('^') {
        let b: f64 = base.trim().parse().map_err(|_| bad())?;
        let e: f64 = exp.trim().parse().map_err(|_| bad())?;
        return Ok(b.powf(e));
    }
    let v: f64 = t.parse().map_err(|_| bad())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// `2^-a..2^-b` (all powers of two in between) or a comma-separated list.
pub fn parse_h_list(s: &str) -> Result<Vec<f64>, CliError> {
    let t = s.trim();
    if let Some((lo, hi)) = t.split_once("..") {
        let exp = |p: &str| -> Result<i32, CliError> {
            p.trim()
                .strip_prefix("2^")
                .and_then(|e| e.trim().parse::<i32>().ok())
                .ok_or_else(|| CliError::Usage(format!("expected 2^k in h range, got {p:?}")))
        };
        let (a, b) = (exp(lo)?, exp(hi)?);
        let (from, to) = (a.max(b), a.min(b));
        return Ok((to..=from).rev().map(|k| 2f64.powi(k)).collect());
    }
    let hs = t
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_number)
        .collect::<Result<Vec<_>, _>>()?;
    if hs.is_empty() || hs.iter().any(|&h| h <= 0.0) {
        return Err(CliError::Usage(format!("invalid h list {s:?}")));
    }
    Ok(hs)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// Values from the config file, as strings in flag syntax.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config file: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| CliError::Usage("config file must hold a JSON object".into()))?;
        let mut values = BTreeMap::new();
        for (k, v) in obj {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                _ => return Err(CliError::Usage(format!("config key {k}: unsupported value"))),
            };
            values.insert(k.replace('_', "-"), s);
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

struct Resolver<'a> {
    file: &'a ConfigFile,
}

impl Resolver<'_> {
    fn raw(&self, key: &str, flag: &Option<String>) -> Option<String> {
        flag.clone().or_else(|| self.file.get(key).map(str::to_string))
    }

    fn num(&self, key: &str, flag: &Option<String>, default: f64) -> Result<f64, CliError> {
        match self.raw(key, flag) {
            Some(s) => parse_number(&s).map_err(|_| CliError::Usage(format!("--{key}: not a number: {s:?}"))),
            None => Ok(default),
        }
    }

    fn count(&self, key: &str, flag: &Option<String>, default: usize) -> Result<usize, CliError> {
        match self.raw(key, flag) {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--{key}: not a non-negative integer: {s:?}"))),
            None => Ok(default),
        }
    }

    fn string(&self, key: &str, flag: &Option<String>, default: &str) -> String {
        self.raw(key, flag).unwrap_or_else(|| default.to_string())
    }

    fn flag(&self, key: &str, flag: bool) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        match self.file.get(key) {
            None => Ok(false),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(CliError::Usage(format!("{key}: expected true or false, got {s:?}"))),
        }
    }
}

fn parse_schemes(s: &str) -> Result<Vec<Scheme>, CliError> {
    let out = split_list(s)
        .iter()
        .map(|n| n.parse::<Scheme>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if out.is_empty() {
        return Err(CliError::Usage("no schemes given".into()));
    }
    Ok(out)
}

fn resolve_problem(r: &Resolver, a: &ProblemArgs, default: &str) -> Result<Problem, CliError> {
    let name = r.string("problem", &a.problem, default);
    let mut p = match name.as_str() {
        "oscillator" | "test" | "nonlinear-oscillator" => {
            problems::nonlinear_oscillator(r.num("lambda", &a.lambda, 1.0)?)
        }
        "gbm" => problems::gbm(r.num("lambda", &a.lambda, -1.0)?, r.num("mu", &a.mu, 0.5)?),
        "damped-oscillator" => problems::damped_oscillator(
            r.num("lambda", &a.lambda, -3.0)?,
            r.num("omega2", &a.omega2, 10.0 * std::f64::consts::PI)?,
            nonneg_sqrt("sigma2", r.num("sigma2", &a.sigma2, 4.0)?)?,
        ),
        "orthogonal" => problems::orthogonal_noise(
            r.num("lambda", &a.lambda, -20.0)?,
            r.num("b", &a.b, 10.0)?,
            nonneg_sqrt("sigma2", r.num("sigma2", &a.sigma2, 25.0)?)?,
        ),
        other => return Err(CliError::Usage(format!("unknown problem {other:?}"))),
    };
    p.t_end = p.t0 + r.num("t-end", &a.t_end, p.t_end - p.t0)?;
    if !(p.t_end > p.t0) {
        return Err(CliError::Usage("--t-end must be positive".into()));
    }
    Ok(p)
}

fn nonneg_sqrt(key: &str, v: f64) -> Result<f64, CliError> {
    if v < 0.0 {
        return Err(CliError::Usage(format!("--{key} must be non-negative")));
    }
    Ok(v.sqrt())
}

fn weak_reference(
    r: &Resolver,
    a: &ConvergenceArgs,
    problem: &Problem,
    problem_name: &str,
    functional: &Functional,
) -> Result<WeakReference, CliError> {
    let mode = r.string("weak-reference", &a.weak_reference, "auto");
    let gbm_second_moment = || {
        let (l, m) = (problem.sde.linear(0)[(0, 0)], problem.sde.term(1).linear_part().map_or(0.0, |b| b[(0, 0)]));
        let x0 = problem.x0[0];
        x0 * x0 * ((2.0 * l + m * m) * (problem.t_end - problem.t0)).exp()
    };
    let analytic_ok = problem_name == "gbm" && (functional.name == "x1^2" || functional.name == "norm2");
    match mode.as_str() {
        "auto" if analytic_ok => Ok(WeakReference::Analytic(gbm_second_moment())),
        "auto" if problem.sde.folded_linear().is_some() => Ok(WeakReference::ExactPath),
        "auto" | "fine-step" => Ok(WeakReference::FineStep),
        "analytic" if analytic_ok => Ok(WeakReference::Analytic(gbm_second_moment())),
        "analytic" => Err(CliError::Usage(
            "analytic weak reference is available for gbm with x1^2 or norm2".into(),
        )),
        "exact-path" if problem.sde.folded_linear().is_some() => Ok(WeakReference::ExactPath),
        "exact-path" => Err(CliError::Usage("exact-path reference needs a linear problem".into())),
        other => Err(CliError::Usage(format!("unknown weak reference {other:?}"))),
    }
}

/// Resolved convergence configuration.
pub fn convergence_config(
    a: &ConvergenceArgs,
    file: &ConfigFile,
    weak: bool,
) -> Result<ExperimentConfig, CliError> {
    let r = Resolver { file };
    let problem_name = r.string("problem", &a.problem.problem, "oscillator");
    let problem = resolve_problem(&r, &a.problem, "oscillator")?;
    let default_schemes = if weak {
        "em-dsl,platen-dsl,platen-weak2-dsl"
    } else {
        "em-dsl,platen-dsl,midpoint-fsl,platen15-dsl"
    };
    let schemes = parse_schemes(&r.string("schemes", &a.schemes, default_schemes))?;
    let default_h = if weak { "2^-3..2^-7" } else { "2^-6..2^-10" };
    let h = parse_h_list(&r.string("h", &a.h, default_h))?;
    let mut cfg = ExperimentConfig::new(problem, schemes, h);
    let (db, dp) = if weak { (40, 2500) } else { (20, 50) };
    cfg.batches = r.count("batches", &a.batches, db)?;
    cfg.paths_per_batch = r.count("paths", &a.paths, dp)?;
    if cfg.batches < 2 || cfg.paths_per_batch == 0 {
        return Err(CliError::Usage("need at least 2 batches and 1 path per batch".into()));
    }
    cfg.seed = r.count("seed", &a.seed, 0)? as u64;
    cfg.reference = r
        .string("reference", &a.reference, "platen15-dsl")
        .parse()
        .map_err(|e: SchemeError| CliError::Usage(e.to_string()))?;
    cfg.reference_refinement = r.count("refinement", &a.refinement, 64)?;
    let fname = r.string("functional", &a.functional, "x1^2");
    cfg.functional = Functional::parse(&fname)
        .ok_or_else(|| CliError::Usage(format!("unknown functional {fname:?}")))?;
    cfg.weak_reference = if weak {
        weak_reference(&r, a, &cfg.problem, &problem_name, &cfg.functional)?
    } else {
        WeakReference::FineStep
    };
    cfg.timing = r.flag("timing", a.timing)?;
    Ok(cfg)
}

fn stability_problem(r: &Resolver, a: &StabilityProblemArgs) -> Result<(RegionProblem, String), CliError> {
    let name = r.string("problem", &a.problem, "orthogonal");
    match name.as_str() {
        "orthogonal" => {
            let bh = r.num("b-h", &a.b_h, 1.0)?;
            Ok((RegionProblem::Orthogonal { bh }, format!("orthogonal b_h={bh}")))
        }
        "oscillator" | "damped-oscillator" => {
            let w = r.num("omega2-h", &a.omega2_h, std::f64::consts::PI)?;
            Ok((RegionProblem::Oscillator { omega2_h: w }, format!("oscillator omega2_h={w}")))
        }
        other => Err(CliError::Usage(format!("unknown stability problem {other:?}"))),
    }
}

fn stability_kinds(r: &Resolver, a: &StabilityProblemArgs) -> Result<Vec<SchemeKind>, CliError> {
    let s = r.string("kinds", &a.kinds, "em_dsl,platen_dsl,implicit_platen_derived");
    let kinds = split_list(&s)
        .iter()
        .map(|k| SchemeKind::parse(k).ok_or_else(|| CliError::Usage(format!("unknown kind {k:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return Err(CliError::Usage("no stability kinds given".into()));
    }
    Ok(kinds)
}

fn cell(v: f64) -> String {
    format!("{v:e}")
}

fn status_name(s: BoundaryStatus) -> &'static str {
    match s {
        BoundaryStatus::Found => "found",
        BoundaryStatus::Unbounded => "unbounded",
        BoundaryStatus::Empty => "empty",
        BoundaryStatus::NonMonotone => "non-monotone",
        BoundaryStatus::Failed => "failed",
    }
}

/// Boundary CSV and the number of columns that need a warning.
pub fn region_csv(a: &RegionArgs, file: &ConfigFile) -> Result<(String, Vec<String>), CliError> {
    let r = Resolver { file };
    let (problem, pdesc) = stability_problem(&r, &a.problem)?;
    let kinds = stability_kinds(&r, &a.problem)?;
    let lo = r.num("lambda-min", &a.lambda_min, -3.0)?;
    let hi = r.num("lambda-max", &a.lambda_max, 0.0)?;
    let columns = r.count("columns", &a.columns, 600)?;
    let scan = RegionScan {
        sigma2_max: r.num("sigma2-max", &a.sigma2_max, 10.0)?,
        samples: r.count("samples", &a.samples, 200)?,
        tol: r.num("tol", &a.tol, 1e-6)?,
    };
    if lo > hi {
        return Err(CliError::Usage("--lambda-min exceeds --lambda-max".into()));
    }
    let grid = stability::linspace(lo, hi, columns);
    let mut all: Vec<RegionKind> = kinds.iter().map(|&k| RegionKind::Scheme(k)).collect();
    all.push(RegionKind::Exact);
    let curves = all
        .iter()
        .map(|&k| stability::region_scan(problem, k, &grid, &scan))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<&str> = all.iter().map(|k| k.name()).collect();
    let mut out = format!(
        "# command=stability-region problem={pdesc} kinds={} lambda_h=[{lo},{hi}] columns={columns} sigma2_max={} samples={} tol={}\n",
        names.join(","),
        scan.sigma2_max,
        scan.samples,
        scan.tol
    );
    let mut header = vec!["lambda_h".to_string()];
    for n in &names {
        header.push(n.to_string());
        header.push(format!("status_{n}"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    let mut warnings = Vec::new();
    for (i, l) in grid.iter().enumerate() {
        let mut cells = vec![cell(*l)];
        for (c, n) in curves.iter().zip(&names) {
            let p = c[i];
            cells.push(p.sigma2_h.map(cell).unwrap_or_default());
            cells.push(status_name(p.status).to_string());
            if matches!(p.status, BoundaryStatus::Failed | BoundaryStatus::NonMonotone) {
                warnings.push(format!("{n}: column lambda_h={l} {}", status_name(p.status)));
            }
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok((out, warnings))
}

pub fn point_csv(a: &PointArgs, file: &ConfigFile) -> Result<String, CliError> {
    let r = Resolver { file };
    let (problem, pdesc) = stability_problem(&r, &a.problem)?;
    let kinds = stability_kinds(&r, &a.problem)?;
    let lh = r.num("lambda-h", &a.lambda_h, -2.0)?;
    let s2h = r.num("sigma2-h", &a.sigma2_h, 2.5)?;
    if s2h < 0.0 {
        return Err(CliError::Usage("--sigma2-h must be non-negative".into()));
    }
    let mut out = format!("# command=stability-point problem={pdesc} lambda_h={lh} sigma2_h={s2h}\nkind,rho,verdict\n");
    let mut all: Vec<RegionKind> = kinds.iter().map(|&k| RegionKind::Scheme(k)).collect();
    all.push(RegionKind::Exact);
    for k in all {
        let rho = stability::point_rho(problem, k, lh, s2h)?;
        let verdict = if rho < 1.0 { "stable" } else { "unstable" };
        out.push_str(&format!("{},{},{verdict}\n", k.name(), cell(rho)));
    }
    Ok(out)
}

pub fn simulate_csv(a: &SimulateArgs, file: &ConfigFile, workers: Option<usize>) -> Result<String, CliError> {
    let r = Resolver { file };
    let problem = resolve_problem(&r, &a.problem, "orthogonal")?;
    let schemes = parse_schemes(&r.string("schemes", &a.schemes, "em-dsl,platen-dsl,implicit-platen"))?;
    let h = r.num("h", &a.h, 0.1)?;
    let steps = r.count("steps", &a.steps, 100)?;
    let paths = r.count("paths", &a.paths, 10_000)?;
    let seed = r.count("seed", &a.seed, 0)? as u64;
    if paths == 0 || steps == 0 || !(h > 0.0) {
        return Err(CliError::Usage("paths, steps and h must be positive".into()));
    }
    let series = schemes
        .iter()
        .map(|&s| experiments::moment_evolution(&problem, s, h, steps, paths, seed, workers))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = schemes.iter().map(|s| s.to_string()).collect();
    let comment = format!(
        "command=simulate problem={} schemes={} h={h} steps={steps} paths={paths} seed={seed}",
        problem.name,
        names.join(",")
    );
    Ok(experiments::moments_to_csv(&series, &comment))
}

fn emit(
    output: &Option<PathBuf>,
    csv: &str,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    match output {
        Some(p) => std::fs::write(p, csv)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => stdout
            .write_all(csv.as_bytes())
            .map_err(|e| CliError::Usage(format!("cannot write output: {e}"))),
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::parse(
            &std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => ConfigFile::default(),
    };
    let workers = match cli.workers.or(file.get("workers").and_then(|w| w.parse().ok())) {
        Some(0) => return Err(CliError::Usage("--workers must be positive".into())),
        w => w,
    };
    match &cli.command {
        Command::Convergence { kind } => {
            let (args, weak) = match kind {
                ConvergenceKind::Strong(a) => (a, false),
                ConvergenceKind::Weak(a) => (a, true),
            };
            let mut cfg = convergence_config(args, &file, weak)?;
            cfg.workers = workers;
            let label = if weak { "weak" } else { "strong" };
            let comment = format!("command=convergence-{label} {}", cfg.describe());
            let result = if weak {
                experiments::weak_error(&cfg)
            } else {
                experiments::strong_error(&cfg)
            };
            let table = match result {
                Ok(t) => t,
                Err(ExperimentError::Divergence { scheme, diverged, paths, table }) => {
                    emit(&cli.output, &table.to_csv(&comment), stdout)?;
                    return Err(CliError::Divergence(format!(
                        "{scheme}: {diverged} of {paths} paths diverged"
                    )));
                }
                Err(e) => return Err(e.into()),
            };
            emit(&cli.output, &table.to_csv(&comment), stdout)?;
            for row in &table.rows {
                let summary = match experiments::order_with_interval(&table.h, &row.errors, 0.95) {
                    Ok((s, hw)) => format!("{}: measured order {s:.3} +- {hw:.3}", row.scheme),
                    Err(_) => format!("{}: order not available", row.scheme),
                };
                let _ = writeln!(stderr, "{summary}");
            }
            Ok(())
        }
        Command::Stability { cmd } => match cmd {
            StabilityCmd::Region(a) => {
                let (csv, warnings) = region_csv(a, &file)?;
                emit(&cli.output, &csv, stdout)?;
                for w in warnings {
                    let _ = writeln!(stderr, "warning: {w}");
                }
                Ok(())
            }
            StabilityCmd::Point(a) => {
                let csv = point_csv(a, &file)?;
                emit(&cli.output, &csv, stdout)?;
                if cli.output.is_some() {
                    let _ = stderr.write_all(csv.as_bytes());
                }
                Ok(())
            }
        },
        Command::Simulate(a) => {
            let csv = simulate_csv(a, &file, workers)?;
            emit(&cli.output, &csv, stdout)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("srkl").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_number("-2.5").unwrap(), -2.5);
        assert_eq!(parse_number("2^-3").unwrap(), 0.125);
        assert_eq!(parse_number("pi").unwrap(), std::f64::consts::PI);
        assert_eq!(parse_number("10pi").unwrap(), 10.0 * std::f64::consts::PI);
        assert_eq!(parse_number("10*pi").unwrap(), 10.0 * std::f64::consts::PI);
        assert!(parse_number("abc").is_err());
        assert!(parse_number("inf").is_err());
    }

    #[test]
    fn h_shorthand() {
        assert_eq!(parse_h_list("2^-2..2^-4").unwrap(), vec![0.25, 0.125, 0.0625]);
        assert_eq!(parse_h_list("2^-4..2^-2").unwrap(), vec![0.25, 0.125, 0.0625]);
        assert_eq!(parse_h_list("0.1, 0.05").unwrap(), vec![0.1, 0.05]);
        assert!(parse_h_list("2^-2..4").is_err());
        assert!(parse_h_list("0.1,-1").is_err());
    }

    #[test]
    fn config_precedence() {
        let file = ConfigFile::parse(r#"{"batches": 4, "paths": 7, "schemes": ["em-dsl", "platen-dsl"], "t_end": 0.5}"#).unwrap();
        let args = ConvergenceArgs {
            batches: Some("3".into()),
            ..Default::default()
        };
        let cfg = convergence_config(&args, &file, false).unwrap();
        assert_eq!(cfg.batches, 3);
        assert_eq!(cfg.paths_per_batch, 7);
        assert_eq!(cfg.schemes.len(), 2);
        assert_eq!(cfg.problem.t_end, 0.5);
        assert!(ConfigFile::parse("[1]").is_err());
    }

    #[test]
    fn unknown_scheme_is_usage_error() {
        let (code, _, err) = run_capture(&["convergence", "strong", "--schemes", "nope-dsl"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("nope"));
        let (code, _, _) = run_capture(&["frobnicate"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn point_output() {
        let (code, out, _) = run_capture(&[
            "stability", "point", "--problem", "orthogonal", "--b-h", "1", "--lambda-h", "-2", "--sigma2-h", "2.5",
        ]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("# "));
        assert_eq!(lines[1], "kind,rho,verdict");
        assert!(lines[2].starts_with("em_dsl,") && lines[2].ends_with(",stable"));
        assert!(lines[3].starts_with("platen_dsl,") && lines[3].ends_with(",stable"));
        assert!(lines[4].starts_with("implicit_platen_derived,") && lines[4].ends_with(",unstable"));
        assert!(lines[5].starts_with("exact,"));
    }

    #[test]
    fn empty_region_grid_is_usage_error() {
        let (code, _, _) = run_capture(&["stability", "region", "--columns", "0"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn zero_paths_is_usage_error() {
        let (code, _, _) = run_capture(&["simulate", "--paths", "0"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn small_strong_run() {
        let args = [
            "convergence", "strong", "--problem", "oscillator", "--lambda", "1", "--schemes", "em-dsl,platen-dsl",
            "--h", "2^-3..2^-5", "--batches", "2", "--paths", "2", "--seed", "42", "--refinement", "2",
        ];
        let (code, a, err) = run_capture(&args);
        assert_eq!(code, 0, "{err}");
        let header = a.lines().nth(1).unwrap();
        assert_eq!(
            header,
            "h,err_em-dsl,ci_em-dsl,time_em-dsl,err_platen-dsl,ci_platen-dsl,time_platen-dsl"
        );
        assert!(err.contains("measured order"));
        let (_, b, _) = run_capture(&args);
        assert_eq!(a, b);
    }
}
