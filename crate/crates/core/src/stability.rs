//! Mean-square stability.
//!
//! Scalar stability functions for the linear test equation
//! `dX = (lambda + sigma) X dt + mu X dW` (with `lambda` in the exponent and
//! `sigma`, `mu` in the remainders), and Kronecker stability matrices for
//! linear systems `dX = A_0 X dt + sum_m B_m X dW_m`.
//!
//! Second moments are vectorised row by row, so that
//! `(A kron A) vec(P) = vec(A P A^T)`.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, kron, LinalgError, Matrix, Vector};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{kind} is defined for a single noise matrix, got {got}")]
    Channels { kind: &'static str, got: usize },
    #[error("empty grid")]
    EmptyGrid,
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Arguments `(z, u, v) = (h Re lambda, h sigma, sqrt(h) mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub z: f64,
    pub u: Complex64,
    pub v: Complex64,
}

impl StabilityPoint {
    pub fn new(h: f64, lambda: Complex64, sigma: Complex64, mu: Complex64) -> Self {
        StabilityPoint {
            z: h * lambda.re,
            u: sigma * h,
            v: mu * h.sqrt(),
        }
    }
}

/// `e^{2z} (|1 + u|^2 + v^2)`; only `|v|` enters.
pub fn r_em_dsl(p: StabilityPoint) -> f64 {
    (2.0 * p.z).exp() * ((Complex64::new(1.0, 0.0) + p.u).norm_sqr() + p.v.norm_sqr())
}

/// `e^{2z} (|1 + u|^2 + |v|^2 (1 + |u + v|^2 / 2))`.
pub fn r_platen_dsl(p: StabilityPoint) -> f64 {
    let v2 = p.v.norm_sqr();
    (2.0 * p.z).exp()
        * ((Complex64::new(1.0, 0.0) + p.u).norm_sqr() + v2 * (1.0 + 0.5 * (p.u + p.v).norm_sqr()))
}

/// `2 Re(lambda + sigma) + |mu|^2 < 0`.
pub fn exact_ms_stable(lambda: Complex64, sigma: Complex64, mu: Complex64) -> bool {
    2.0 * (lambda + sigma).re + mu.norm_sqr() < 0.0
}

/// `|sigma| <= -Re lambda`, on top of exact stability.
pub fn sufficient_em_dsl(lambda: Complex64, sigma: Complex64, mu: Complex64) -> bool {
    exact_ms_stable(lambda, sigma, mu) && sigma.norm() <= -lambda.re
}

/// `|sigma|^2 + |mu|^4/2 <= 2 Re(lambda)^2`, `Re(sigma conj(mu)) <= 0` and
/// `|mu|^2 |sigma|^2 <= -8/3 Re(lambda)^3`, on top of exact stability.
pub fn sufficient_platen_dsl(lambda: Complex64, sigma: Complex64, mu: Complex64) -> bool {
    let l = lambda.re;
    let (s2, m2) = (sigma.norm_sqr(), mu.norm_sqr());
    exact_ms_stable(lambda, sigma, mu)
        && s2 + 0.5 * m2 * m2 <= 2.0 * l * l
        && (sigma * mu.conj()).re <= 0.0
        && m2 * s2 <= -8.0 / 3.0 * l * l * l
}

/// `I kron A_0 + A_0 kron I + sum_m B_m kron B_m`.
pub fn sde_stability_matrix(a0: &Matrix, bs: &[Matrix]) -> Result<Matrix, StabilityError> {
    linalg::ensure_square(a0)?;
    let d = a0.nrows();
    for b in bs {
        if b.shape() != (d, d) {
            return Err(LinalgError::DimensionMismatch(format!(
                "noise matrix {:?} for drift {d}x{d}",
                b.shape()
            ))
            .into());
        }
    }
    let id = Matrix::identity(d, d);
    let mut s = kron(&id, a0) + kron(a0, &id);
    for b in bs {
        s += kron(b, b);
    }
    Ok(s)
}

/// All eigenvalues of the SDE stability matrix in the open left half-plane.
pub fn stable_sde(s: &Matrix) -> Result<bool, StabilityError> {
    Ok(linalg::spectral_abscissa(s)? < 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    EmDsl,
    PlatenDsl,
    /// `(I + A) kron (I + A) + B kron B + B^2 kron B^2`.
    ImplicitPlatenPrinted,
    /// Exact second-moment map of the drift-implicit Platen step.
    ImplicitPlatenDerived,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::EmDsl,
        SchemeKind::PlatenDsl,
        SchemeKind::ImplicitPlatenPrinted,
        SchemeKind::ImplicitPlatenDerived,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::EmDsl => "em_dsl",
            SchemeKind::PlatenDsl => "platen_dsl",
            SchemeKind::ImplicitPlatenPrinted => "implicit_platen_printed",
            SchemeKind::ImplicitPlatenDerived => "implicit_platen_derived",
        }
    }

    pub fn parse(s: &str) -> Option<SchemeKind> {
        let s = s.trim().replace('-', "_").to_ascii_lowercase();
        let s = match s.as_str() {
            "implicit_platen" | "implicit" => "implicit_platen_derived",
            other => other,
        }
        .to_string();
        SchemeKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// `C = e^{-A} B e^{A} (I + B) - B`, the Platen correction matrix.
pub fn platen_c_bar(abar: &Matrix, bbar: &Matrix) -> Result<Matrix, StabilityError> {
    let d = abar.nrows();
    let ea = linalg::expm(abar)?;
    let ema = linalg::expm(&-abar)?;
    Ok(ema * bbar * ea * (Matrix::identity(d, d) + bbar) - bbar)
}

/// Second-moment map of one step for `Abar = h A_0`, `Bbar_m = sqrt(h) B_m`.
pub fn scheme_stability_matrix(
    kind: SchemeKind,
    abar: &Matrix,
    bbars: &[Matrix],
) -> Result<Matrix, StabilityError> {
    linalg::ensure_square(abar)?;
    let d = abar.nrows();
    let id = Matrix::identity(d, d);
    let id2 = Matrix::identity(d * d, d * d);
    let single = |name| {
        if bbars.len() != 1 {
            Err(StabilityError::Channels {
                kind: name,
                got: bbars.len(),
            })
        } else {
            Ok(&bbars[0])
        }
    };
    for b in bbars {
        if b.shape() != (d, d) {
            return Err(LinalgError::DimensionMismatch(format!(
                "noise matrix {:?} for drift {d}x{d}",
                b.shape()
            ))
            .into());
        }
    }
    Ok(match kind {
        SchemeKind::EmDsl => {
            let ea = linalg::expm(abar)?;
            let mut inner = id2;
            for b in bbars {
                inner += kron(b, b);
            }
            kron(&ea, &ea) * inner
        }
        SchemeKind::PlatenDsl => {
            let b = single(kind.name())?;
            let ea = linalg::expm(abar)?;
            let c = platen_c_bar(abar, b)?;
            kron(&ea, &ea) * (id2 + kron(b, b) + kron(&c, &c) * 0.5)
        }
        SchemeKind::ImplicitPlatenPrinted => {
            let b = single(kind.name())?;
            let ia = &id + abar;
            let b2 = b * b;
            kron(&ia, &ia) + kron(b, b) + kron(&b2, &b2)
        }
        SchemeKind::ImplicitPlatenDerived => {
            let b = single(kind.name())?;
            let m = linalg::solve(&(&id - abar), &id)?;
            let c = b * (abar + b);
            kron(&m, &m) * (id2 + kron(b, b) + kron(&c, &c) * 0.5)
        }
    })
}

/// Both matrices of a linear system at one step size.
#[derive(Debug, Clone)]
pub struct StabilityMatrices {
    pub kind: SchemeKind,
    pub abar: Matrix,
    pub bbars: Vec<Matrix>,
    pub s_sde: Matrix,
    pub s_scheme: Matrix,
}

impl StabilityMatrices {
    pub fn new(kind: SchemeKind, a0: &Matrix, bs: &[Matrix], h: f64) -> Result<Self, StabilityError> {
        let abar = a0 * h;
        let bbars: Vec<Matrix> = bs.iter().map(|b| b * h.sqrt()).collect();
        Ok(StabilityMatrices {
            kind,
            s_sde: sde_stability_matrix(&abar, &bbars)?,
            s_scheme: scheme_stability_matrix(kind, &abar, &bbars)?,
            abar,
            bbars,
        })
    }

    pub fn rho(&self) -> Result<f64, StabilityError> {
        Ok(linalg::spectral_radius(&self.s_scheme)?)
    }

    /// Spectral radius of the exact one-step moment map `e^{S h}`.
    pub fn exact_factor(&self) -> Result<f64, StabilityError> {
        exact_step_factor(&self.abar, &self.bbars)
    }
}

/// `rho(exp(S(Abar, Bbar)))`, computed as `exp` of the spectral abscissa.
pub fn exact_step_factor(abar: &Matrix, bbars: &[Matrix]) -> Result<f64, StabilityError> {
    let s = sde_stability_matrix(abar, bbars)?;
    Ok(linalg::spectral_abscissa(&s)?.exp())
}

/// `P(t)` with `vec P(t) = e^{S t} vec P0`, symmetrised.
pub fn exact_second_moment(s: &Matrix, p0: &Matrix, t: f64) -> Result<Matrix, StabilityError> {
    let d = p0.nrows();
    if s.shape() != (d * d, d * d) {
        return Err(LinalgError::DimensionMismatch(format!(
            "stability matrix {:?} for {d}x{d} moments",
            s.shape()
        ))
        .into());
    }
    let e = linalg::expm(&(s * t))?;
    let p = linalg::unvec_rows(&(e * linalg::vec_rows(p0)), d);
    Ok((&p + p.transpose()) * 0.5)
}

/// `vec P_{n+1} = S vec P_n`.
pub fn scheme_moment_step(s: &Matrix, p: &Vector) -> Vector {
    s * p
}

/// Two-parameter linear test systems used for region plots. `bh` and
/// `omega2_h` are already scaled by the step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionProblem {
    /// `A = [[lh, bh], [0, lh]]`, `B = sqrt(s2h) J`.
    Orthogonal { bh: f64 },
    /// `A = [[lh, w2h], [-w2h, lh]]`, `B = sqrt(s2h) J`.
    Oscillator { omega2_h: f64 },
}

impl RegionProblem {
    /// `(Abar, Bbar)` at `(lambda h, sigma^2 h)`.
    pub fn matrices(&self, lambda_h: f64, sigma2_h: f64) -> (Matrix, Matrix) {
        let a = match *self {
            RegionProblem::Orthogonal { bh } => {
                Matrix::from_row_slice(2, 2, &[lambda_h, bh, 0.0, lambda_h])
            }
            RegionProblem::Oscillator { omega2_h } => {
                Matrix::from_row_slice(2, 2, &[lambda_h, omega2_h, -omega2_h, lambda_h])
            }
        };
        let s = sigma2_h.max(0.0).sqrt();
        let b = Matrix::from_row_slice(2, 2, &[0.0, s, -s, 0.0]);
        (a, b)
    }
}

/// Scheme kind or the exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Scheme(SchemeKind),
    Exact,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Scheme(k) => k.name(),
            RegionKind::Exact => "exact",
        }
    }
}

/// Per-step amplification of second moments at one parameter point.
pub fn point_rho(
    problem: RegionProblem,
    kind: RegionKind,
    lambda_h: f64,
    sigma2_h: f64,
) -> Result<f64, StabilityError> {
    let (a, b) = problem.matrices(lambda_h, sigma2_h);
    match kind {
        RegionKind::Exact => exact_step_factor(&a, &[b]),
        RegionKind::Scheme(k) => Ok(linalg::spectral_radius(&scheme_stability_matrix(k, &a, &[b])?)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryStatus {
    /// Crossing found and refined by bisection.
    Found,
    /// Stable at every scanned `sigma^2 h`.
    Unbounded,
    /// Unstable already without noise.
    Empty,
    /// Several crossings in the scan; the first one is reported.
    NonMonotone,
    /// Evaluation failed in this column.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub lambda_h: f64,
    pub sigma2_h: Option<f64>,
    pub status: BoundaryStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScan {
    /// Largest `sigma^2 h` examined.
    pub sigma2_max: f64,
    /// Samples in the monotonicity scan before bisection.
    pub samples: usize,
    /// Absolute bisection tolerance.
    pub tol: f64,
}

impl Default for RegionScan {
    fn default() -> Self {
        RegionScan {
            sigma2_max: 10.0,
            samples: 200,
            tol: 1e-6,
        }
    }
}

/// `n` equidistant points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn scan_column(
    problem: RegionProblem,
    kind: RegionKind,
    lambda_h: f64,
    cfg: &RegionScan,
) -> Result<BoundaryPoint, StabilityError> {
    let f = |s2: f64| point_rho(problem, kind, lambda_h, s2).map(|r| r - 1.0);
    let pts = linspace(0.0, cfg.sigma2_max, cfg.samples.max(2));
    let vals = pts.iter().map(|&s| f(s)).collect::<Result<Vec<_>, _>>()?;
    let stable = |v: f64| v < 0.0;
    if !stable(vals[0]) {
        return Ok(BoundaryPoint {
            lambda_h,
            sigma2_h: None,
            status: BoundaryStatus::Empty,
        });
    }
    let Some(k) = vals.iter().position(|&v| !stable(v)) else {
        return Ok(BoundaryPoint {
            lambda_h,
            sigma2_h: None,
            status: BoundaryStatus::Unbounded,
        });
    };
    let monotone = vals[k..].iter().all(|&v| !stable(v));
    let (mut lo, mut hi) = (pts[k - 1], pts[k]);
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if stable(f(mid)?) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BoundaryPoint {
        lambda_h,
        sigma2_h: Some(0.5 * (lo + hi)),
        status: if monotone {
            BoundaryStatus::Found
        } else {
            BoundaryStatus::NonMonotone
        },
    })
}

/// For every `lambda h`, the `sigma^2 h` where the amplification crosses 1.
/// Columns are independent and evaluated in parallel.
pub fn region_scan(
    problem: RegionProblem,
    kind: RegionKind,
    lambda_grid: &[f64],
    cfg: &RegionScan,
) -> Result<Vec<BoundaryPoint>, StabilityError> {
    if lambda_grid.is_empty() {
        return Err(StabilityError::EmptyGrid);
    }
    if !(cfg.sigma2_max > 0.0) || cfg.samples < 2 || !(cfg.tol > 0.0) {
        return Err(StabilityError::Parameter(format!("{cfg:?}")));
    }
    Ok(lambda_grid
        .par_iter()
        .map(|&l| {
            scan_column(problem, kind, l, cfg).unwrap_or(BoundaryPoint {
                lambda_h: l,
                sigma2_h: None,
                status: BoundaryStatus::Failed,
            })
        })
        .collect())
}
