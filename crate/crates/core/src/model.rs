//! Semi-linear SDEs `dX = sum_m (A_m X + g_m(t, X)) * dW_m` with `W_0(t) = t`.
//!
//! The linear parts `A_0..A_M` must commute pairwise; this is checked once at
//! construction. The nonlinear remainders are [`Term`]s, which keep affine
//! pieces separate from arbitrary callables so that Jacobians and the zero
//! remainder can be recognised without sampling.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, Vector, COMMUTE_TOL};

pub type TermFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("expected {expected} matrices/terms (M+1), got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("matrix A_{index} has shape {shape:?}, expected {dim}x{dim}")]
    MatrixShape {
        index: usize,
        shape: (usize, usize),
        dim: usize,
    },
    #[error("{0}")]
    Commutativity(CommutativityViolation),
    #[error("channel {0} out of range")]
    ChannelOutOfRange(usize),
    #[error("expected {expected} Wiener increments, got {got}")]
    IncrementCount { expected: usize, got: usize },
    #[error("exact linear solution requested but g_{0} is not identically zero")]
    NonlinearRemainder(usize),
    #[error("diffusion g_{0} has a nonlinear part without a Jacobian")]
    MissingJacobian(usize),
    #[error("invalid integration grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpretation {
    Ito,
    Stratonovich,
}

impl Interpretation {
    /// 1/2 for Itô, 0 for Stratonovich.
    pub fn gamma_star(self) -> f64 {
        match self {
            Interpretation::Ito => 0.5,
            Interpretation::Stratonovich => 0.0,
        }
    }
}

pub fn gamma_star(interpretation: Interpretation) -> f64 {
    interpretation.gamma_star()
}

/// A remainder `g(t, x) = L x + c + f(t, x)`, every part optional.
#[derive(Clone, Default)]
pub struct Term {
    linear: Option<Matrix>,
    constant: Option<Vector>,
    nonlinear: Option<TermFn>,
    jacobian: Option<JacobianFn>,
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Term")
            .field("linear", &self.linear)
            .field("constant", &self.constant)
            .field("nonlinear", &self.nonlinear.is_some())
            .field("jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl Term {
    pub fn zero() -> Self {
        Term::default()
    }

    pub fn linear(m: Matrix) -> Self {
        Term::zero().plus_linear(&m)
    }

    pub fn constant(c: Vector) -> Self {
        Term {
            constant: Some(c),
            ..Term::default()
        }
    }

    pub fn affine(m: Matrix, c: Vector) -> Self {
        Term {
            constant: Some(c),
            ..Term::linear(m)
        }
    }

    pub fn nonlinear<F>(f: F) -> Self
    where
        F: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    {
        Term {
            nonlinear: Some(Arc::new(f)),
            ..Term::default()
        }
    }

    /// Attach a Jacobian (in `x`) of the nonlinear part.
    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    /// Adds `m x`; an all-zero `m` leaves the term untouched.
    pub fn plus_linear(mut self, m: &Matrix) -> Self {
        if m.iter().all(|&x| x == 0.0) {
            return self;
        }
        self.linear = Some(match self.linear.take() {
            Some(l) => l + m,
            None => m.clone(),
        });
        self
    }

    pub fn plus_constant(mut self, c: &Vector) -> Self {
        if c.iter().all(|&x| x == 0.0) {
            return self;
        }
        self.constant = Some(match self.constant.take() {
            Some(k) => k + c,
            None => c.clone(),
        });
        self
    }

    pub fn is_zero(&self) -> bool {
        self.linear.is_none() && self.constant.is_none() && self.nonlinear.is_none()
    }

    pub fn is_affine(&self) -> bool {
        self.nonlinear.is_none()
    }

    pub fn linear_part(&self) -> Option<&Matrix> {
        self.linear.as_ref()
    }

    pub fn constant_part(&self) -> Option<&Vector> {
        self.constant.as_ref()
    }

    pub fn eval(&self, t: f64, x: &Vector) -> Vector {
        let mut out = match &self.nonlinear {
            Some(f) => f(t, x),
            None => Vector::zeros(x.len()),
        };
        if let Some(l) = &self.linear {
            out.gemv(1.0, l, x, 1.0);
        }
        if let Some(c) = &self.constant {
            out += c;
        }
        out
    }

    /// Jacobian in `x`, if it is known.
    pub fn jacobian(&self, t: f64, x: &Vector) -> Option<Matrix> {
        let d = x.len();
        let mut j = match (&self.nonlinear, &self.jacobian) {
            (None, _) => Matrix::zeros(d, d),
            (Some(_), Some(jf)) => jf(t, x),
            (Some(_), None) => return None,
        };
        if let Some(l) = &self.linear {
            j += l;
        }
        Some(j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutativityViolation {
    pub l: usize,
    pub k: usize,
    pub norm: f64,
}

impl fmt::Display for CommutativityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "A_{} and A_{} do not commute (max |[A_l, A_k]| = {:.3e})",
            self.l, self.k, self.norm
        )
    }
}

/// Checks every pair `(l, k)`; reports the first offending pair.
pub fn validate_commutativity(linear: &[Matrix], tol: f64) -> Result<(), CommutativityViolation> {
    for l in 0..linear.len() {
        for k in l + 1..linear.len() {
            let c = linear[l].clone() * &linear[k] - &linear[k] * &linear[l];
            let norm = linalg::norm_max(&c);
            if norm > tol * (1.0 + linalg::norm_max(&linear[l]) * linalg::norm_max(&linear[k])) {
                return Err(CommutativityViolation { l, k, norm });
            }
        }
    }
    Ok(())
}

/// Which linear parts a Lawson scheme moves into the exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LawsonMode {
    /// Underlying scheme: every linear part is treated as part of `g_m`.
    None,
    /// Drift Lawson: only `A_0` stays in the exponent.
    Drift,
    /// Full Lawson: all `A_m` stay in the exponent.
    Full,
}

#[derive(Clone, Debug)]
pub struct SemiLinearSde {
    dim: usize,
    interpretation: Interpretation,
    linear: Vec<Matrix>,
    terms: Vec<Term>,
    drift_exponent: Matrix,
}

impl SemiLinearSde {
    /// `linear` and `terms` both hold `M+1` entries, index 0 being the drift.
    pub fn new(
        interpretation: Interpretation,
        linear: Vec<Matrix>,
        terms: Vec<Term>,
    ) -> Result<Self, ModelError> {
        Self::with_tolerance(interpretation, linear, terms, COMMUTE_TOL)
    }

    pub fn with_tolerance(
        interpretation: Interpretation,
        linear: Vec<Matrix>,
        terms: Vec<Term>,
        tol: f64,
    ) -> Result<Self, ModelError> {
        if linear.is_empty() {
            return Err(ModelError::ChannelCount {
                expected: 1,
                got: 0,
            });
        }
        if terms.len() != linear.len() {
            return Err(ModelError::ChannelCount {
                expected: linear.len(),
                got: terms.len(),
            });
        }
        let dim = linear[0].nrows();
        for (index, a) in linear.iter().enumerate() {
            if a.nrows() != dim || a.ncols() != dim || dim == 0 {
                return Err(ModelError::MatrixShape {
                    index,
                    shape: a.shape(),
                    dim,
                });
            }
            linalg::ensure_finite(a)?;
        }
        validate_commutativity(&linear, tol).map_err(ModelError::Commutativity)?;
        let gs = interpretation.gamma_star();
        let mut drift_exponent = linear[0].clone();
        for a in &linear[1..] {
            if gs != 0.0 && a.iter().any(|&x| x != 0.0) {
                drift_exponent -= (a * a) * gs;
            }
        }
        Ok(SemiLinearSde {
            dim,
            interpretation,
            linear,
            terms,
            drift_exponent,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of Wiener channels `M`.
    pub fn channels(&self) -> usize {
        self.linear.len() - 1
    }

    pub fn interpretation(&self) -> Interpretation {
        self.interpretation
    }

    pub fn gamma_star(&self) -> f64 {
        self.interpretation.gamma_star()
    }

    pub fn linear(&self, m: usize) -> &Matrix {
        &self.linear[m]
    }

    pub fn linear_parts(&self) -> &[Matrix] {
        &self.linear
    }

    pub fn term(&self, m: usize) -> &Term {
        &self.terms[m]
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// `A_0 - gamma* sum_{m>=1} A_m^2`.
    pub fn drift_exponent(&self) -> &Matrix {
        &self.drift_exponent
    }

    /// `true` when every `A_m` with `m >= 1` is zero.
    pub fn has_drift_only_exponent(&self) -> bool {
        self.linear[1..]
            .iter()
            .all(|a| a.iter().all(|&x| x == 0.0))
    }

    pub fn all_terms_zero(&self) -> bool {
        self.terms.iter().all(Term::is_zero)
    }

    /// Full drift coefficient `A_0 x + g_0(t, x)`.
    pub fn drift(&self, t: f64, x: &Vector) -> Vector {
        self.coefficient(0, t, x)
    }

    /// `A_m x + g_m(t, x)` for any channel, 0 being the drift.
    pub fn coefficient(&self, m: usize, t: f64, x: &Vector) -> Vector {
        let mut out = self.terms[m].eval(t, x);
        out.gemv(1.0, &self.linear[m], x, 1.0);
        out
    }

    /// The corrected remainder used inside Lawson stages.
    pub fn g_tilde(&self, m: usize, t: f64, x: &Vector) -> Result<Vector, ModelError> {
        if m > self.channels() {
            return Err(ModelError::ChannelOutOfRange(m));
        }
        if m > 0 {
            return Ok(self.terms[m].eval(t, x));
        }
        Ok(self.g_tilde_all(t, x).swap_remove(0))
    }

    /// All `g~_m(t, x)` for `m = 0..=M`, sharing the `g_m` evaluations.
    pub fn g_tilde_all(&self, t: f64, x: &Vector) -> Vec<Vector> {
        let mut out: Vec<Vector> = self
            .terms
            .iter()
            .map(|term| {
                if term.is_zero() {
                    Vector::zeros(self.dim)
                } else {
                    term.eval(t, x)
                }
            })
            .collect();
        let gs = self.gamma_star();
        if gs != 0.0 {
            for m in 1..=self.channels() {
                if self.terms[m].is_zero() || self.linear[m].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let (head, tail) = out.split_at_mut(1);
                head[0].gemv(-2.0 * gs, &self.linear[m], &tail[m - 1], 1.0);
            }
        }
        out
    }

    /// Jacobians of every `g~_m`, or `None` if some remainder lacks one.
    pub fn g_tilde_jacobians(&self, t: f64, x: &Vector) -> Option<Vec<Matrix>> {
        let mut out = self
            .terms
            .iter()
            .map(|g| g.jacobian(t, x))
            .collect::<Option<Vec<_>>>()?;
        let gs = self.gamma_star();
        if gs != 0.0 {
            for m in 1..=self.channels() {
                if self.terms[m].is_zero() || self.linear[m].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let corr = &self.linear[m] * &out[m] * (2.0 * gs);
                out[0] -= corr;
            }
        }
        Some(out)
    }

    /// `(A_0 - gamma* sum A_m^2) h + sum A_m dW_m`.
    pub fn delta_l(&self, h: f64, dw: &[f64]) -> Result<Matrix, ModelError> {
        self.delta_l_stage(h, dw)
    }

    /// Stage exponent for time offset `c0` and channel offsets `cm`.
    pub fn delta_l_stage(&self, c0: f64, cm: &[f64]) -> Result<Matrix, ModelError> {
        if cm.len() != self.channels() {
            return Err(ModelError::IncrementCount {
                expected: self.channels(),
                got: cm.len(),
            });
        }
        Ok(self.delta_l_unchecked(c0, cm))
    }

    pub(crate) fn delta_l_unchecked(&self, c0: f64, cm: &[f64]) -> Matrix {
        let mut out = &self.drift_exponent * c0;
        for (a, &c) in self.linear[1..].iter().zip(cm) {
            if c != 0.0 && a.iter().any(|&x| x != 0.0) {
                out += a * c;
            }
        }
        out
    }

    /// Exact flow of the linear SDE over `[t0, t]` driven by the Wiener
    /// increments `w = W(t) - W(t0)`.
    pub fn exact_linear_solution(
        &self,
        t0: f64,
        t: f64,
        x0: &Vector,
        w: &[f64],
    ) -> Result<Vector, ModelError> {
        if let Some(m) = self.terms.iter().position(|g| !g.is_zero()) {
            return Err(ModelError::NonlinearRemainder(m));
        }
        let l = self.delta_l(t - t0, w)?;
        Ok(linalg::expm(&l)? * x0)
    }

    /// For purely linear SDEs (every `g_m = L_m x`), the equivalent SDE with
    /// `A_m + L_m` as linear parts and zero remainders. `None` if some
    /// remainder is not linear or the folded parts do not commute.
    pub fn folded_linear(&self) -> Option<SemiLinearSde> {
        let mut linear = Vec::with_capacity(self.linear.len());
        for (a, g) in self.linear.iter().zip(&self.terms) {
            if !g.is_affine() || g.constant.is_some() {
                return None;
            }
            linear.push(match &g.linear {
                Some(l) => a + l,
                None => a.clone(),
            });
        }
        let terms = vec![Term::zero(); linear.len()];
        SemiLinearSde::new(self.interpretation, linear, terms).ok()
    }

    /// The same SDE rewritten so that only the linear parts selected by
    /// `mode` stay in `A_m`; the rest is folded into `g_m`.
    pub fn lawson_view(&self, mode: LawsonMode) -> SemiLinearSde {
        let keep = |m: usize| match mode {
            LawsonMode::Full => true,
            LawsonMode::Drift => m == 0,
            LawsonMode::None => false,
        };
        let zero = Matrix::zeros(self.dim, self.dim);
        let mut linear = Vec::with_capacity(self.linear.len());
        let mut terms = Vec::with_capacity(self.terms.len());
        for m in 0..self.linear.len() {
            if keep(m) {
                linear.push(self.linear[m].clone());
                terms.push(self.terms[m].clone());
            } else {
                linear.push(zero.clone());
                terms.push(self.terms[m].clone().plus_linear(&self.linear[m]));
            }
        }
        // Zeroed parts commute trivially with the retained ones.
        SemiLinearSde::with_tolerance(self.interpretation, linear, terms, f64::INFINITY)
            .expect("projection of a valid SDE is valid")
    }

    /// Convert to the other stochastic calculus. The drift changes by
    /// `-/+ 1/2 sum_{m>=1} (A_m + dg_m)(A_m x + g_m)`, which needs the
    /// Jacobians of the diffusion remainders.
    pub fn to_interpretation(&self, target: Interpretation) -> Result<SemiLinearSde, ModelError> {
        if target == self.interpretation {
            return Ok(self.clone());
        }
        // Itô drift = Stratonovich drift + 1/2 sum (db_m) b_m
        let sign = match target {
            Interpretation::Ito => 0.5,
            Interpretation::Stratonovich => -0.5,
        };
        let mut a0 = self.linear[0].clone();
        let mut g0 = self.terms[0].clone();
        let mut nonlinear_channels = Vec::new();
        for m in 1..=self.channels() {
            let a = &self.linear[m];
            let g = &self.terms[m];
            if a.iter().any(|&x| x != 0.0) {
                a0 += (a * a) * sign;
            }
            if g.is_zero() {
                continue;
            }
            if g.is_affine() {
                let l = g.linear.clone().unwrap_or_else(|| Matrix::zeros(self.dim, self.dim));
                let c = g.constant.clone().unwrap_or_else(|| Vector::zeros(self.dim));
                let lin = (a * &l + &l * a + &l * &l) * sign;
                let cst = ((a + &l) * c) * sign;
                g0 = g0.plus_linear(&lin).plus_constant(&cst);
            } else if g.jacobian.is_none() {
                return Err(ModelError::MissingJacobian(m));
            } else {
                nonlinear_channels.push(m);
            }
        }
        if !nonlinear_channels.is_empty() {
            let linear = self.linear.clone();
            let terms = self.terms.clone();
            let base = g0.clone();
            let f = move |t: f64, x: &Vector| -> Vector {
                let mut out = base.eval(t, x);
                for &m in &nonlinear_channels {
                    let a = &linear[m];
                    let g = &terms[m];
                    let jac = g.jacobian(t, x).expect("checked above");
                    let b = a * x + g.eval(t, x);
                    // A_m A_m x already moved into A_0
                    let corr = a * g.eval(t, x) + jac * b;
                    out += corr * sign;
                }
                out
            };
            g0 = Term::nonlinear(f);
        }
        let mut linear = self.linear.clone();
        linear[0] = a0;
        let mut terms = self.terms.clone();
        terms[0] = g0;
        SemiLinearSde::with_tolerance(target, linear, terms, f64::INFINITY)
    }

    pub fn stratonovich_from_ito(&self) -> Result<SemiLinearSde, ModelError> {
        self.to_interpretation(Interpretation::Stratonovich)
    }

    pub fn ito_from_stratonovich(&self) -> Result<SemiLinearSde, ModelError> {
        self.to_interpretation(Interpretation::Ito)
    }
}

/// Split `A0_full = A0 + residual` with `A0 = c A1` the Frobenius projection
/// onto `A1`, so `A0` commutes with `A1` by construction.
pub fn split_commuting(a0_full: &Matrix, a1: &Matrix) -> Result<(Matrix, Matrix), ModelError> {
    linalg::ensure_square(a0_full)?;
    if a0_full.shape() != a1.shape() {
        return Err(LinalgError::DimensionMismatch(format!(
            "split of {:?} against {:?}",
            a0_full.shape(),
            a1.shape()
        ))
        .into());
    }
    let denom = a1.dot(a1);
    let c = if denom == 0.0 { 0.0 } else { a0_full.dot(a1) / denom };
    let a0 = a1 * c;
    let residual = a0_full - &a0;
    Ok((a0, residual))
}

/// Equidistant time grid `t0 < t1 < ... < tN = T` with initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub x0: Vector,
}

impl IntegrationGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize, x0: Vector) -> Result<Self, ModelError> {
        if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
            return Err(ModelError::Grid(format!("need t0 < T, got [{t0}, {t_end}]")));
        }
        if steps == 0 {
            return Err(ModelError::Grid("step count must be at least 1".into()));
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::Grid("initial state is not finite".into()));
        }
        Ok(IntegrationGrid {
            t0,
            t_end,
            steps,
            x0,
        })
    }

    pub fn h(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_end
        } else {
            self.t0 + n as f64 * self.h()
        }
    }
}
