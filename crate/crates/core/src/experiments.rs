//! Monte Carlo convergence and moment experiments.
//!
//! Paths are indexed globally (`batch * paths_per_batch + i`) and path `p`
//! always draws its increments from stream `p` of the master seed. Per-path
//! results are collected in index order and reduced sequentially, so tables
//! do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::linalg::{self, Matrix, Vector};
use crate::model::{IntegrationGrid, Interpretation, ModelError, SemiLinearSde};
use crate::noise::{sample_grid, NoiseError, NoiseGrid};
use crate::problems::{linear_parts, Problem};
use crate::schemes::{integrate_final, integrate_observed, Scheme, SchemeError, TableauKind};
use crate::stability::{self, StabilityError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("{scheme}: {diverged} of {paths} paths diverged")]
    Divergence {
        scheme: String,
        diverged: usize,
        paths: usize,
        table: Box<ErrorTable>,
    },
}

/// Share of diverging paths above which an experiment fails.
pub const DIVERGENCE_LIMIT: f64 = 1e-3;

/// Least-squares fit of `log2(error) = slope log2(h) + intercept`.
pub fn estimate_order(h: &[f64], errors: &[f64]) -> Result<(f64, f64), ExperimentError> {
    if h.len() != errors.len() || h.len() < 3 {
        return Err(ExperimentError::Config(format!(
            "need at least 3 (h, error) pairs, got {} and {}",
            h.len(),
            errors.len()
        )));
    }
    if h.iter().chain(errors).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(ExperimentError::Config("h and errors must be positive".into()));
    }
    for (i, a) in h.iter().enumerate() {
        if h[i + 1..].contains(a) {
            return Err(ExperimentError::Config(format!("duplicated h = {a}")));
        }
    }
    let x: Vec<f64> = h.iter().map(|v| v.log2()).collect();
    let y: Vec<f64> = errors.iter().map(|v| v.log2()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fitted order and the Student-t half-width of its confidence interval
/// (`n - 2` degrees of freedom).
pub fn order_with_interval(h: &[f64], errors: &[f64], level: f64) -> Result<(f64, f64), ExperimentError> {
    let (slope, intercept) = estimate_order(h, errors)?;
    let x: Vec<f64> = h.iter().map(|v| v.log2()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let ssr: f64 = x
        .iter()
        .zip(errors)
        .map(|(a, e)| (e.log2() - intercept - slope * a).powi(2))
        .sum();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| ExperimentError::Config(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok((slope, t * se))
}

/// Student-t half-width of the confidence interval for the mean of
/// `batch_means` at the given level.
pub fn confidence_interval(batch_means: &[f64], level: f64) -> Result<f64, ExperimentError> {
    let b = batch_means.len();
    if b < 2 {
        return Err(ExperimentError::Config(format!(
            "need at least 2 batches, got {b}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ExperimentError::Config(format!("level {level} outside (0, 1)")));
    }
    let n = b as f64;
    let mean = batch_means.iter().sum::<f64>() / n;
    let var = batch_means.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| ExperimentError::Config(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok(t * (var / n).sqrt())
}

/// A scalar functional `f(Y_N)` for weak errors.
#[derive(Clone)]
pub struct Functional {
    pub name: String,
    f: Arc<dyn Fn(&Vector) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Functional({})", self.name)
    }
}

impl Functional {
    pub fn new<F>(name: &str, f: F) -> Self
    where
        F: Fn(&Vector) -> f64 + Send + Sync + 'static,
    {
        Functional {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    /// `x_1^2`.
    pub fn first_squared() -> Self {
        Functional::new("x1^2", |x| x[0] * x[0])
    }

    pub fn norm_squared() -> Self {
        Functional::new("norm2", |x| x.norm_squared())
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        (self.f)(x)
    }

    /// Names understood by the command line.
    pub fn parse(name: &str) -> Option<Functional> {
        match name {
            "x1^2" | "x1sq" => Some(Functional::first_squared()),
            "norm2" | "|x|^2" => Some(Functional::norm_squared()),
            "x1" => Some(Functional::new("x1", |x| x[0])),
            "one" | "1" => Some(Functional::new("one", |_| 1.0)),
            _ => None,
        }
    }
}

/// How `E f(X(T))` is obtained for weak errors.
#[derive(Debug, Clone, PartialEq)]
pub enum WeakReference {
    /// Known expectation; each scheme is compared with this number.
    Analytic(f64),
    /// Exact solution on the same Brownian path (linear problems only);
    /// the difference `f(Y_N) - f(X(T))` is averaged.
    ExactPath,
    /// Reference scheme at `h_min / refinement` on the same Brownian path.
    FineStep,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub schemes: Vec<Scheme>,
    pub h: Vec<f64>,
    pub batches: usize,
    pub paths_per_batch: usize,
    pub reference: Scheme,
    /// Reference step is `h_min / reference_refinement`.
    pub reference_refinement: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Record wall-clock time per batch.
    pub timing: bool,
    pub functional: Functional,
    pub weak_reference: WeakReference,
}

impl ExperimentConfig {
    pub fn new(problem: Problem, schemes: Vec<Scheme>, h: Vec<f64>) -> Self {
        ExperimentConfig {
            problem,
            schemes,
            h,
            batches: 20,
            paths_per_batch: 50,
            reference: Scheme::lawson(TableauKind::PlatenStrong15, crate::model::LawsonMode::Drift),
            reference_refinement: 64,
            seed: 0,
            workers: None,
            timing: false,
            functional: Functional::first_squared(),
            weak_reference: WeakReference::FineStep,
        }
    }

    pub fn paths(&self) -> usize {
        self.batches * self.paths_per_batch
    }

    /// One-line description of everything that determines the results.
    pub fn describe(&self) -> String {
        let schemes: Vec<String> = self.schemes.iter().map(|s| s.to_string()).collect();
        let h: Vec<String> = self.h.iter().map(|h| format!("{h}")).collect();
        format!(
            "problem={} schemes={} h={} batches={} paths_per_batch={} reference={} refinement={} seed={} functional={} weak_reference={:?}",
            self.problem.name,
            schemes.join(","),
            h.join(","),
            self.batches,
            self.paths_per_batch,
            self.reference,
            self.reference_refinement,
            self.seed,
            self.functional.name,
            self.weak_reference,
        )
    }
}

/// Errors of one scheme over the h list.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeErrors {
    pub scheme: String,
    pub errors: Vec<f64>,
    pub ci: Vec<f64>,
    /// Seconds per batch, when timing was requested.
    pub seconds: Option<Vec<f64>>,
    pub diverged: Vec<usize>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub h: Vec<f64>,
    pub rows: Vec<SchemeErrors>,
    pub paths: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ErrorTable {
    pub fn row(&self, scheme: &str) -> Option<&SchemeErrors> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }

    /// CSV with a leading `# ` comment line, then `h, err_s, ci_s, time_s, ...`.
    pub fn to_csv(&self, comment: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {comment}");
        let mut header = vec!["h".to_string()];
        for r in &self.rows {
            header.push(format!("err_{}", r.scheme));
            header.push(format!("ci_{}", r.scheme));
            header.push(format!("time_{}", r.scheme));
        }
        let _ = writeln!(out, "{}", header.join(","));
        for (k, h) in self.h.iter().enumerate() {
            let mut cells = vec![format!("{h:e}")];
            for r in &self.rows {
                cells.push(format!("{:e}", r.errors[k]));
                cells.push(format!("{:e}", r.ci[k]));
                cells.push(fmt_opt(r.seconds.as_ref().map(|s| s[k])));
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// The form of the SDE a scheme is meant for: the midpoint rule is a
/// Stratonovich scheme, everything else is applied to the Itô form.
pub fn sde_for(scheme: Scheme, sde: &SemiLinearSde) -> Result<SemiLinearSde, ModelError> {
    let target = match scheme {
        Scheme::Lawson(s) if s.tableau.kind() == TableauKind::Midpoint => Interpretation::Stratonovich,
        _ => Interpretation::Ito,
    };
    sde.to_interpretation(target)
}

fn run_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Step counts: `(hs sorted decreasing, reference h, coarsening factors, reference steps)`.
fn plan(cfg: &ExperimentConfig) -> Result<(Vec<f64>, f64, Vec<usize>, usize), ExperimentError> {
    if cfg.schemes.is_empty() {
        return Err(ExperimentError::Config("no schemes".into()));
    }
    if cfg.batches == 0 || cfg.paths_per_batch == 0 {
        return Err(ExperimentError::Config("batches and paths must be positive".into()));
    }
    if cfg.reference_refinement == 0 {
        return Err(ExperimentError::Config("reference refinement must be positive".into()));
    }
    let mut hs = cfg.h.clone();
    if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(ExperimentError::Config("h values must be positive".into()));
    }
    hs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if hs.windows(2).any(|w| w[0] == w[1]) {
        return Err(ExperimentError::Config("duplicated h value".into()));
    }
    let span = cfg.problem.t_end - cfg.problem.t0;
    let h_ref = hs[hs.len() - 1] / cfg.reference_refinement as f64;
    let as_count = |x: f64, what: &str| -> Result<usize, ExperimentError> {
        let r = x.round();
        if r < 1.0 || (x - r).abs() > 1e-9 * x.max(1.0) {
            return Err(ExperimentError::Config(format!("{what} is not an integer: {x}")));
        }
        Ok(r as usize)
    };
    let n_ref = as_count(span / h_ref, "T / h_ref")?;
    let factors = hs
        .iter()
        .map(|h| as_count(h / h_ref, "h / h_ref"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((hs, h_ref, factors, n_ref))
}

struct PathOutcome {
    /// Per `(scheme, h)`: `None` when the path diverged.
    values: Vec<Option<f64>>,
    seconds: Vec<f64>,
}

enum Mode {
    Strong,
    Weak,
}

fn run_paths(cfg: &ExperimentConfig, mode: Mode) -> Result<ErrorTable, ExperimentError> {
    let (hs, h_ref, factors, n_ref) = plan(cfg)?;
    let p = &cfg.problem;
    let sdes = cfg
        .schemes
        .iter()
        .map(|&s| sde_for(s, &p.sde))
        .collect::<Result<Vec<_>, _>>()?;
    let ref_sde = sde_for(cfg.reference, &p.sde)?;
    let channels = p.sde.channels();
    let need_dz = cfg.reference.needs_dz() || cfg.schemes.iter().any(|s| s.needs_dz());
    let exact_sde = match (&mode, &cfg.weak_reference) {
        (Mode::Weak, WeakReference::ExactPath) => Some(p.sde.folded_linear().ok_or_else(|| {
            ExperimentError::Config("exact-path reference needs a linear problem with commuting parts".into())
        })?),
        _ => None,
    };
    let use_reference_scheme = matches!(mode, Mode::Strong)
        || matches!(cfg.weak_reference, WeakReference::FineStep);
    // Without a reference scheme the finest grid is the smallest experiment h.
    let (n_fine, h_fine, factors) = if use_reference_scheme {
        (n_ref, h_ref, factors)
    } else {
        let base = factors[factors.len() - 1];
        (n_ref / base, h_ref * base as f64, factors.iter().map(|f| f / base).collect())
    };
    let ns = cfg.schemes.len();
    let nh = hs.len();
    let timing = cfg.timing;

    let one_path = |idx: usize| -> Result<PathOutcome, ExperimentError> {
        let noise: NoiseGrid = sample_grid(cfg.seed, idx as u64, channels, n_fine, h_fine, need_dz)?;
        let mut values = vec![None; ns * nh];
        let mut seconds = vec![0.0; ns * nh];
        let reference: Option<f64> = match &mode {
            Mode::Strong => None,
            Mode::Weak => match &cfg.weak_reference {
                WeakReference::Analytic(_) => Some(0.0),
                WeakReference::ExactPath => {
                    let ex = exact_sde.as_ref().unwrap();
                    let w: Vec<f64> = (0..channels).map(|c| noise.total(c)).collect();
                    let x = ex.exact_linear_solution(p.t0, p.t_end, &p.x0, &w)?;
                    Some(cfg.functional.eval(&x))
                }
                WeakReference::FineStep => None,
            },
        };
        let ref_state = if use_reference_scheme {
            let grid = IntegrationGrid::new(p.t0, p.t_end, n_fine, p.x0.clone())?;
            match integrate_final(&ref_sde, cfg.reference, &grid, &noise) {
                Ok(y) => Some(y),
                Err(e) if e.is_divergence() => return Ok(PathOutcome { values, seconds }),
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let reference = reference.or_else(|| ref_state.as_ref().map(|y| cfg.functional.eval(y)));
        for (k, &factor) in factors.iter().enumerate() {
            let coarse = noise.coarsen(factor)?;
            let grid = IntegrationGrid::new(p.t0, p.t_end, n_fine / factor, p.x0.clone())?;
            for (s, &scheme) in cfg.schemes.iter().enumerate() {
                let start = timing.then(Instant::now);
                let y = match integrate_final(&sdes[s], scheme, &grid, &coarse) {
                    Ok(y) => y,
                    Err(e) if e.is_divergence() => continue,
                    Err(e) => return Err(e.into()),
                };
                if let Some(start) = start {
                    seconds[s * nh + k] = start.elapsed().as_secs_f64();
                }
                values[s * nh + k] = Some(match &mode {
                    Mode::Strong => (y - ref_state.as_ref().unwrap()).norm(),
                    Mode::Weak => cfg.functional.eval(&y) - reference.unwrap(),
                });
            }
        }
        Ok(PathOutcome { values, seconds })
    };

    let n_paths = cfg.paths();
    let outcomes: Vec<PathOutcome> = run_pool(cfg.workers, || {
        (0..n_paths)
            .into_par_iter()
            .map(one_path)
            .collect::<Result<Vec<_>, _>>()
    })??;

    let analytic = match (&mode, &cfg.weak_reference) {
        (Mode::Weak, WeakReference::Analytic(v)) => Some(*v),
        _ => None,
    };
    let mut rows = Vec::with_capacity(ns);
    for (s, scheme) in cfg.schemes.iter().enumerate() {
        let mut errors = Vec::with_capacity(nh);
        let mut cis = Vec::with_capacity(nh);
        let mut secs = Vec::with_capacity(nh);
        let mut diverged = Vec::with_capacity(nh);
        for k in 0..nh {
            let idx = s * nh + k;
            let mut batch_means = Vec::with_capacity(cfg.batches);
            let mut div = 0;
            let mut total_secs = 0.0;
            for b in 0..cfg.batches {
                let (mut sum, mut count) = (0.0, 0usize);
                for o in &outcomes[b * cfg.paths_per_batch..(b + 1) * cfg.paths_per_batch] {
                    total_secs += o.seconds[idx];
                    match o.values[idx] {
                        Some(v) => {
                            sum += v;
                            count += 1;
                        }
                        None => div += 1,
                    }
                }
                if count > 0 {
                    batch_means.push(sum / count as f64 - analytic.unwrap_or(0.0));
                }
            }
            let mean = if batch_means.is_empty() {
                f64::NAN
            } else {
                batch_means.iter().sum::<f64>() / batch_means.len() as f64
            };
            let ci = if batch_means.len() >= 2 {
                confidence_interval(&batch_means, 0.95)?
            } else {
                f64::NAN
            };
            errors.push(match mode {
                Mode::Strong => mean,
                Mode::Weak => mean.abs(),
            });
            cis.push(ci);
            secs.push(total_secs / cfg.batches as f64);
            diverged.push(div);
        }
        let slope = if nh >= 3 {
            estimate_order(&hs, &errors).ok().map(|(s, _)| s)
        } else {
            None
        };
        rows.push(SchemeErrors {
            scheme: scheme.to_string(),
            errors,
            ci: cis,
            seconds: timing.then_some(secs),
            diverged,
            slope,
        });
    }
    let table = ErrorTable {
        h: hs,
        rows,
        paths: n_paths,
    };
    for r in &table.rows {
        let worst = r.diverged.iter().copied().max().unwrap_or(0);
        if worst as f64 > DIVERGENCE_LIMIT * n_paths as f64 {
            return Err(ExperimentError::Divergence {
                scheme: r.scheme.clone(),
                diverged: worst,
                paths: n_paths,
                table: Box::new(table.clone()),
            });
        }
    }
    Ok(table)
}

/// Mean over paths of `|Y_N - Y_N^ref|` per scheme and step size.
pub fn strong_error(cfg: &ExperimentConfig) -> Result<ErrorTable, ExperimentError> {
    run_paths(cfg, Mode::Strong)
}

/// `|E f(Y_N) - E f(X(T))|` per scheme and step size.
pub fn weak_error(cfg: &ExperimentConfig) -> Result<ErrorTable, ExperimentError> {
    run_paths(cfg, Mode::Weak)
}

/// Monte Carlo second moments `E(Y_n Y_n^T)` along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub scheme: String,
    pub times: Vec<f64>,
    /// Row-major `E(Y Y^T)` per recorded step.
    pub mean: Vec<Vec<f64>>,
    /// Standard errors of `mean`.
    pub stderr: Vec<Vec<f64>>,
    /// Exact second moments, for linear problems.
    pub exact: Option<Vec<Vec<f64>>>,
    /// First step at which some path blew up; the series stops before it.
    pub truncated_at: Option<usize>,
    pub dim: usize,
}

impl MomentSeries {
    /// `E(Y_i^2)` at recorded step `n`.
    pub fn component(&self, n: usize, i: usize) -> f64 {
        self.mean[n][i * self.dim + i]
    }
}

/// Paths per chunk; chunks are reduced in order.
const MOMENT_CHUNK: usize = 1000;

pub fn moment_evolution(
    problem: &Problem,
    scheme: Scheme,
    h: f64,
    steps: usize,
    paths: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<MomentSeries, ExperimentError> {
    if paths == 0 || steps == 0 || !(h > 0.0) {
        return Err(ExperimentError::Config(
            "paths, steps and h must be positive".into(),
        ));
    }
    let sde = sde_for(scheme, &problem.sde)?;
    let d = sde.dim();
    let dd = d * d;
    let t_end = problem.t0 + h * steps as f64;
    let grid = IntegrationGrid::new(problem.t0, t_end, steps, problem.x0.clone())?;
    let channels = sde.channels();
    let need_dz = scheme.needs_dz();

    // per chunk: sums and sums of squares of Y Y^T entries, first blow-up step
    let chunk = |c: usize| -> Result<(Vec<f64>, Vec<f64>, Option<usize>), ExperimentError> {
        let mut s1 = vec![0.0; (steps + 1) * dd];
        let mut s2 = vec![0.0; (steps + 1) * dd];
        let mut first_div: Option<usize> = None;
        let lo = c * MOMENT_CHUNK;
        let hi = (lo + MOMENT_CHUNK).min(paths);
        for p in lo..hi {
            let noise = sample_grid(seed, p as u64, channels, steps, h, need_dz)?;
            let res = integrate_observed(&sde, scheme, &grid, &noise, |n, _, y| {
                for i in 0..d {
                    for j in 0..d {
                        let v = y[i] * y[j];
                        s1[n * dd + i * d + j] += v;
                        s2[n * dd + i * d + j] += v * v;
                    }
                }
            });
            match res {
                Ok(_) => {}
                Err(SchemeError::Diverged { step, .. }) => {
                    first_div = Some(first_div.map_or(step, |f: usize| f.min(step)));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok((s1, s2, first_div))
    };
    let chunks = paths.div_ceil(MOMENT_CHUNK);
    let parts = run_pool(workers, || {
        (0..chunks)
            .into_par_iter()
            .map(chunk)
            .collect::<Result<Vec<_>, _>>()
    })??;
    let mut s1 = vec![0.0; (steps + 1) * dd];
    let mut s2 = vec![0.0; (steps + 1) * dd];
    let mut truncated_at: Option<usize> = None;
    for (a, b, div) in parts {
        for (x, y) in s1.iter_mut().zip(&a) {
            *x += y;
        }
        for (x, y) in s2.iter_mut().zip(&b) {
            *x += y;
        }
        if let Some(dv) = div {
            truncated_at = Some(truncated_at.map_or(dv, |t| t.min(dv)));
        }
    }
    let recorded = truncated_at.unwrap_or(steps + 1);
    let n = paths as f64;
    let mut mean = Vec::with_capacity(recorded);
    let mut stderr = Vec::with_capacity(recorded);
    for k in 0..recorded {
        let m: Vec<f64> = (0..dd).map(|e| s1[k * dd + e] / n).collect();
        let se: Vec<f64> = (0..dd)
            .map(|e| {
                let var = (s2[k * dd + e] / n - m[e] * m[e]).max(0.0) * n / (n - 1.0).max(1.0);
                (var / n).sqrt()
            })
            .collect();
        mean.push(m);
        stderr.push(se);
    }
    let times: Vec<f64> = (0..recorded).map(|k| grid.time(k)).collect();
    let exact = match linear_parts(problem) {
        Some((a, b)) if problem.sde.interpretation() == Interpretation::Ito => {
            let s = stability::sde_stability_matrix(&a, &[b])?;
            let p0 = &problem.x0 * problem.x0.transpose();
            let mut out = Vec::with_capacity(recorded);
            for &t in &times {
                let p = stability::exact_second_moment(&s, &p0, t - problem.t0)?;
                out.push(linalg::vec_rows(&p).iter().copied().collect());
            }
            Some(out)
        }
        _ => None,
    };
    Ok(MomentSeries {
        scheme: scheme.to_string(),
        times,
        mean,
        stderr,
        exact,
        truncated_at,
        dim: d,
    })
}

/// `vec P_n = S^n vec P_0` for `n = 0..=steps`.
pub fn iterate_moments(s: &Matrix, p0: &Matrix, steps: usize) -> Vec<Vec<f64>> {
    let mut v = linalg::vec_rows(p0);
    let mut out = vec![v.iter().copied().collect()];
    for _ in 0..steps {
        v = stability::scheme_moment_step(s, &v);
        out.push(v.iter().copied().collect());
    }
    out
}

/// CSV `t, mc_<scheme>_1, mc_<scheme>_2, ..., exact_1, exact_2, ...` of the
/// diagonal second moments. Truncated series leave their cells empty.
pub fn moments_to_csv(series: &[MomentSeries], comment: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {comment}");
    let Some(longest) = series.iter().max_by_key(|s| s.times.len()) else {
        return out;
    };
    let d = longest.dim;
    let mut header = vec!["t".to_string()];
    for s in series {
        for i in 1..=d {
            header.push(format!("mc_{}_{i}", s.scheme));
        }
    }
    let exact = series.iter().find_map(|s| s.exact.as_ref());
    if exact.is_some() {
        for i in 1..=d {
            header.push(format!("exact_{i}"));
        }
    }
    let _ = writeln!(out, "{}", header.join(","));
    for (k, t) in longest.times.iter().enumerate() {
        let mut cells = vec![format!("{t:e}")];
        for s in series {
            for i in 0..d {
                cells.push(if k < s.mean.len() {
                    format!("{:e}", s.component(k, i))
                } else {
                    String::new()
                });
            }
        }
        if let Some(ex) = exact {
            for i in 0..d {
                cells.push(ex.get(k).map(|e| format!("{:e}", e[i * d + i])).unwrap_or_default());
            }
        }
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LawsonMode;
    use crate::problems;

    #[test]
    fn order_regression() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let (s, c) = estimate_order(&h, &e).unwrap();
        assert!((s - 1.5).abs() < 1e-12);
        assert!((c - 3f64.log2()).abs() < 1e-12);
        assert!(estimate_order(&[0.1, 0.1, 0.05], &[1.0, 1.0, 0.5]).is_err());
        assert!(estimate_order(&[0.1, 0.05], &[1.0, 0.5]).is_err());
        assert!(estimate_order(&[0.1, 0.05, 0.01], &[1.0, 0.0, 0.5]).is_err());
        let noisy: Vec<f64> = h
            .iter()
            .enumerate()
            .map(|(i, x)| x.powf(1.5) * if i % 2 == 0 { 1.01 } else { 0.99 })
            .collect();
        let (s, _) = estimate_order(&h, &noisy).unwrap();
        assert!((1.45..=1.55).contains(&s));
    }

    #[test]
    fn ci_closed_forms() {
        assert_eq!(confidence_interval(&[2.0, 2.0, 2.0], 0.95).unwrap(), 0.0);
        // two batches m +- d: sd = d sqrt(2), half-width t_{0.975,1} d
        let d = 0.3;
        let hw = confidence_interval(&[1.0 - d, 1.0 + d], 0.95).unwrap();
        assert!((hw - 12.706204736174698 * d).abs() < 1e-9);
        assert!(confidence_interval(&[1.0], 0.95).is_err());
    }

    fn small_config() -> ExperimentConfig {
        let p = problems::nonlinear_oscillator(1.0);
        let mut cfg = ExperimentConfig::new(
            p,
            vec![
                Scheme::lawson(TableauKind::EulerMaruyama, LawsonMode::Drift),
                Scheme::lawson(TableauKind::PlatenStrong15, LawsonMode::Drift),
            ],
            vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
        );
        cfg.batches = 2;
        cfg.paths_per_batch = 3;
        cfg.reference_refinement = 4;
        cfg.seed = 17;
        cfg
    }

    #[test]
    fn reference_scheme_at_reference_h_has_zero_error() {
        let mut cfg = small_config();
        cfg.h = vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0];
        cfg.reference_refinement = 1;
        let t = strong_error(&cfg).unwrap();
        let row = t.row("platen15-dsl").unwrap();
        assert_eq!(row.errors[2], 0.0);
        assert_eq!(t.h, vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0]);
    }

    #[test]
    fn deterministic_across_workers() {
        let mut a = small_config();
        a.workers = Some(1);
        let mut b = small_config();
        b.workers = Some(3);
        let ta = strong_error(&a).unwrap();
        let tb = strong_error(&b).unwrap();
        assert_eq!(ta.to_csv("x"), tb.to_csv("x"));
    }

    #[test]
    fn common_noise_consistency() {
        // error of the reference scheme at 4 h_ref equals a direct computation
        let cfg = {
            let mut c = small_config();
            c.schemes = vec![c.reference];
            c.h = vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
            c
        };
        let t = strong_error(&cfg).unwrap();
        let p = &cfg.problem;
        let n_ref = 128;
        let mut sum_b = vec![0.0; cfg.batches];
        for b in 0..cfg.batches {
            for i in 0..cfg.paths_per_batch {
                let idx = (b * cfg.paths_per_batch + i) as u64;
                let noise = sample_grid(cfg.seed, idx, 1, n_ref, 1.0 / n_ref as f64, true).unwrap();
                let g = IntegrationGrid::new(0.0, 1.0, n_ref, p.x0.clone()).unwrap();
                let r = integrate_final(&p.sde, cfg.reference, &g, &noise).unwrap();
                let c = noise.coarsen(4).unwrap();
                let g = IntegrationGrid::new(0.0, 1.0, 32, p.x0.clone()).unwrap();
                let y = integrate_final(&p.sde, cfg.reference, &g, &c).unwrap();
                sum_b[b] += (y - r).norm();
            }
        }
        let direct = sum_b.iter().map(|s| s / cfg.paths_per_batch as f64).sum::<f64>() / cfg.batches as f64;
        assert_eq!(t.rows[0].errors[2], direct);
    }

    #[test]
    fn constant_functional_has_zero_weak_error() {
        let mut cfg = small_config();
        cfg.functional = Functional::parse("one").unwrap();
        cfg.weak_reference = WeakReference::Analytic(1.0);
        let t = weak_error(&cfg).unwrap();
        assert!(t.rows.iter().all(|r| r.errors.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn csv_shape() {
        let t = strong_error(&small_config()).unwrap();
        let csv = t.to_csv("cfg");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# cfg");
        assert_eq!(
            lines[1],
            "h,err_em-dsl,ci_em-dsl,time_em-dsl,err_platen15-dsl,ci_platen15-dsl,time_platen15-dsl"
        );
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn deterministic_decay_moments() {
        let p = problems::orthogonal_noise(-1.0, 0.0, 0.0);
        let s = moment_evolution(&p, "em-dsl".parse().unwrap(), 0.1, 10, 10, 1, None).unwrap();
        for k in 0..=10 {
            let want = (2.0 * -1.0 * 0.1 * k as f64).exp();
            assert!((s.component(k, 0) - want).abs() < 1e-13);
            let ex = s.exact.as_ref().unwrap()[k][0];
            assert!((ex - want).abs() < 1e-13);
        }
    }
}
