use std::sync::Arc;

use crate::linalg::{self, Matrix, Vector};
use crate::model::{IntegrationGrid, Interpretation, LawsonMode, SemiLinearSde};
use crate::noise::NoiseGrid;

use super::implicit::implicit_platen_raw;
use super::tableau::Coefficients;
use super::{Scheme, SchemeError, SchemeSpec, Trajectory, BLOWUP_NORM, NEWTON_MAX_ITER, NEWTON_TOL};

/// `e^{L}` and `e^{-L}`; `None` stands for the identity.
#[derive(Debug)]
pub(crate) struct ExpPair {
    plus: Matrix,
    minus: Matrix,
}

pub(crate) type Exp = Option<Arc<ExpPair>>;

pub(crate) fn exp_pair(l: &Matrix) -> Result<Exp, SchemeError> {
    if l.iter().all(|&x| x == 0.0) {
        return Ok(None);
    }
    Ok(Some(Arc::new(ExpPair {
        plus: linalg::expm(l)?,
        minus: linalg::expm(&-l)?,
    })))
}

fn apply(e: &Exp, v: Vector) -> Vector {
    match e {
        Some(e) => &e.plus * v,
        None => v,
    }
}

/// `e^{-L} g~_m(t, e^{L} h)` for every channel.
fn stage_k(sde: &SemiLinearSde, t: f64, h: &Vector, e: &Exp) -> Vec<Vector> {
    match e {
        None => sde.g_tilde_all(t, h),
        Some(e) => {
            let x = &e.plus * h;
            sde.g_tilde_all(t, &x)
                .into_iter()
                .map(|g| &e.minus * g)
                .collect()
        }
    }
}

fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Modified Newton for a diagonal stage `H = base + sum_m d_m K^m(H)`.
/// The Jacobian is built once, at the predictor `base`.
#[allow(clippy::too_many_arguments)]
fn solve_implicit_stage(
    sde: &SemiLinearSde,
    diag: &[f64],
    t: f64,
    base: &Vector,
    e: &Exp,
    scale: f64,
    iterations: &mut usize,
) -> Result<Vec<Vector>, SchemeError> {
    let residual = |h: &Vector, k: &[Vector]| {
        let mut r = h - base;
        for (d, km) in diag.iter().zip(k) {
            if *d != 0.0 {
                r.axpy(-d, km, 1.0);
            }
        }
        r
    };
    let tol = NEWTON_TOL * scale;
    let mut h = base.clone();
    let mut k = stage_k(sde, t, &h, e);
    let mut r = residual(&h, &k);
    if max_abs(&r) <= tol {
        return Ok(k);
    }
    let dim = base.len();
    let jac = match analytic_stage_jacobian(sde, diag, t, base, e) {
        Some(j) => j,
        None => {
            let mut j = Matrix::zeros(dim, dim);
            for c in 0..dim {
                let delta = f64::EPSILON.sqrt() * (1.0 + base[c].abs());
                let mut hp = base.clone();
                hp[c] += delta;
                let kp = stage_k(sde, t, &hp, e);
                let col = (residual(&hp, &kp) - &r) / delta;
                j.set_column(c, &col);
            }
            j
        }
    };
    let lu = jac.lu();
    for it in 1..=NEWTON_MAX_ITER {
        let delta = lu.solve(&r).ok_or(linalg::LinalgError::Singular {
            condition: f64::INFINITY,
        })?;
        h -= delta;
        k = stage_k(sde, t, &h, e);
        r = residual(&h, &k);
        *iterations += 1;
        let res = max_abs(&r);
        if !res.is_finite() {
            return Err(SchemeError::NonFinite);
        }
        if res <= tol {
            return Ok(k);
        }
        if it == NEWTON_MAX_ITER {
            return Err(SchemeError::NewtonFailed {
                residual: res,
                iterations: it,
            });
        }
    }
    unreachable!()
}

fn analytic_stage_jacobian(
    sde: &SemiLinearSde,
    diag: &[f64],
    t: f64,
    h: &Vector,
    e: &Exp,
) -> Option<Matrix> {
    let x = apply(e, h.clone());
    let jacs = sde.g_tilde_jacobians(t, &x)?;
    let dim = h.len();
    let mut out = Matrix::identity(dim, dim);
    for (d, jm) in diag.iter().zip(jacs) {
        if *d == 0.0 {
            continue;
        }
        let jm = match e {
            Some(e) => &e.minus * jm * &e.plus,
            None => jm,
        };
        out -= jm * *d;
    }
    Some(out)
}

/// Runs the stages and returns `V`. `exp_of(c0, cm)` gives the stage
/// exponential for the stage offsets.
fn run_stages<F>(
    sde: &SemiLinearSde,
    coeffs: &Coefficients,
    t: f64,
    y: &Vector,
    scale: f64,
    mut exp_of: F,
    iterations: &mut usize,
) -> Result<Vector, SchemeError>
where
    F: FnMut(f64, &[f64]) -> Result<Exp, SchemeError>,
{
    coeffs.check_structure()?;
    let s = coeffs.stages();
    let channels = coeffs.channels();
    let mut ks: Vec<Option<Vec<Vector>>> = Vec::with_capacity(s);
    for i in 0..s {
        if !coeffs.stage_used(i) {
            ks.push(None);
            continue;
        }
        let mut base = y.clone();
        for (j, kj) in ks.iter().enumerate() {
            if let Some(kj) = kj {
                for (m, km) in kj.iter().enumerate() {
                    let z = coeffs.big(m, i, j);
                    if z != 0.0 {
                        base.axpy(z, km, 1.0);
                    }
                }
            }
        }
        let c0 = coeffs.stage_offset(0, i);
        let e = exp_of(c0, &coeffs.stage_offsets(i))?;
        let k = if coeffs.is_implicit_at(i) && !sde.all_terms_zero() {
            let diag: Vec<f64> = (0..=channels).map(|m| coeffs.big(m, i, i)).collect();
            solve_implicit_stage(sde, &diag, t + c0, &base, &e, scale, iterations)?
        } else {
            stage_k(sde, t + c0, &base, &e)
        };
        ks.push(Some(k));
    }
    let mut v = y.clone();
    for (i, ki) in ks.iter().enumerate() {
        if let Some(ki) = ki {
            for (m, km) in ki.iter().enumerate() {
                let z = coeffs.small(m, i);
                if z != 0.0 {
                    v.axpy(z, km, 1.0);
                }
            }
        }
    }
    Ok(v)
}

/// One-step map of a scheme on a fixed SDE.
///
/// Holds the rewritten SDE for the chosen Lawson mode and, when only the drift
/// sits in the exponent, a cache of `e^{±A h c}` keyed by the time offset so
/// that a run computes each exponential once.
pub struct Stepper {
    sde: SemiLinearSde,
    scheme: Scheme,
    trivial: bool,
    drift_only: bool,
    cache: Vec<(u64, Exp)>,
    newton_iterations: usize,
}

impl Stepper {
    pub fn new(sde: &SemiLinearSde, scheme: Scheme) -> Result<Self, SchemeError> {
        let sde = match scheme {
            Scheme::Lawson(spec) => {
                spec.tableau.check_channels(sde.channels())?;
                sde.lawson_view(spec.mode)
            }
            Scheme::ImplicitPlaten => {
                if sde.channels() != 1 {
                    return Err(SchemeError::Channels {
                        scheme: "implicit-platen",
                        channels: sde.channels(),
                    });
                }
                sde.to_interpretation(Interpretation::Ito)?
            }
        };
        let drift_only = sde.has_drift_only_exponent();
        let trivial = drift_only && sde.drift_exponent().iter().all(|&x| x == 0.0);
        Ok(Stepper {
            sde,
            scheme,
            trivial,
            drift_only,
            cache: Vec::new(),
            newton_iterations: 0,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// The SDE as seen by the scheme (after moving linear parts into `g`).
    pub fn effective_sde(&self) -> &SemiLinearSde {
        &self.sde
    }

    /// Newton iterations spent so far.
    pub fn newton_iterations(&self) -> usize {
        self.newton_iterations
    }

    fn cached(cache: &mut Vec<(u64, Exp)>, drift: &Matrix, c0: f64) -> Result<Exp, SchemeError> {
        let key = c0.to_bits();
        if let Some((_, e)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(e.clone());
        }
        if cache.len() > 32 {
            cache.clear();
        }
        let e = exp_pair(&(drift * c0))?;
        cache.push((key, e.clone()));
        Ok(e)
    }

    pub fn step(
        &mut self,
        t: f64,
        y: &Vector,
        h: f64,
        dw: &[f64],
        dz: Option<f64>,
    ) -> Result<Vector, SchemeError> {
        if dw.len() != self.sde.channels() {
            return Err(SchemeError::Mismatch(format!(
                "{} increments for {} channels",
                dw.len(),
                self.sde.channels()
            )));
        }
        if y.len() != self.sde.dim() {
            return Err(SchemeError::Mismatch(format!(
                "state of length {} for dimension {}",
                y.len(),
                self.sde.dim()
            )));
        }
        let out = match self.scheme {
            Scheme::ImplicitPlaten => {
                implicit_platen_raw(&self.sde, y, t, h, dw[0], &mut self.newton_iterations)?
            }
            Scheme::Lawson(spec) => {
                let coeffs = spec.tableau.coefficients(h, dw, dz)?;
                let scale = 1.0 + max_abs(y);
                let sde = &self.sde;
                let cache = &mut self.cache;
                let (trivial, drift_only) = (self.trivial, self.drift_only);
                let mut exp_of = |c0: f64, cm: &[f64]| -> Result<Exp, SchemeError> {
                    if trivial {
                        Ok(None)
                    } else if drift_only {
                        Self::cached(cache, sde.drift_exponent(), c0)
                    } else {
                        exp_pair(&sde.delta_l_unchecked(c0, cm))
                    }
                };
                let v = run_stages(sde, &coeffs, t, y, scale, &mut exp_of, &mut self.newton_iterations)?;
                let e = exp_of(h, dw)?;
                apply(&e, v)
            }
        };
        if out.iter().any(|x| !x.is_finite()) {
            return Err(SchemeError::NonFinite);
        }
        Ok(out)
    }
}

/// One step of a Lawson scheme.
pub fn srk_lawson_step(
    sde: &SemiLinearSde,
    spec: SchemeSpec,
    y: &Vector,
    t: f64,
    h: f64,
    dw: &[f64],
    dz: Option<f64>,
) -> Result<Vector, SchemeError> {
    Stepper::new(sde, Scheme::Lawson(spec))?.step(t, y, h, dw, dz)
}

/// Closed-form Euler-Maruyama SL step: `e^{dL}(Y + sum_m g~_m(t, Y) dW_m)`.
pub fn em_sl_step(
    sde: &SemiLinearSde,
    mode: LawsonMode,
    y: &Vector,
    t: f64,
    h: f64,
    dw: &[f64],
) -> Result<Vector, SchemeError> {
    let sde = sde.lawson_view(mode);
    let g = sde.g_tilde_all(t, y);
    let mut v = y + &g[0] * h;
    for (gm, w) in g[1..].iter().zip(dw) {
        v += gm * *w;
    }
    let e = exp_pair(&sde.delta_l(h, dw)?)?;
    Ok(apply(&e, v))
}

/// Closed-form Platen SL step for a single channel.
pub fn platen_sl_step(
    sde: &SemiLinearSde,
    mode: LawsonMode,
    y: &Vector,
    t: f64,
    h: f64,
    dw: f64,
) -> Result<Vector, SchemeError> {
    if sde.channels() != 1 {
        return Err(SchemeError::Channels {
            scheme: "platen",
            channels: sde.channels(),
        });
    }
    let sde = sde.lawson_view(mode);
    let sh = h.sqrt();
    let g = sde.g_tilde_all(t, y);
    let h2 = y + &g[0] * h + &g[1] * sh;
    let e2 = exp_pair(&sde.delta_l(h, &[sh])?)?;
    let g1_h2 = stage_k(&sde, t + h, &h2, &e2).swap_remove(1);
    let v = y + &g[0] * h + &g[1] * dw + (g1_h2 - &g[1]) * ((dw * dw - h) / (2.0 * sh));
    let e = exp_pair(&sde.delta_l(h, &[dw])?)?;
    Ok(apply(&e, v))
}

fn check_inputs(
    sde: &SemiLinearSde,
    scheme: Scheme,
    grid: &IntegrationGrid,
    noise: &NoiseGrid,
) -> Result<(), SchemeError> {
    if noise.steps() != grid.steps {
        return Err(SchemeError::Mismatch(format!(
            "noise has {} steps, grid has {}",
            noise.steps(),
            grid.steps
        )));
    }
    if (noise.h() - grid.h()).abs() > 1e-12 * grid.h() {
        return Err(SchemeError::Mismatch(format!(
            "noise step {} differs from grid step {}",
            noise.h(),
            grid.h()
        )));
    }
    if noise.channels() != sde.channels() {
        return Err(SchemeError::Mismatch(format!(
            "noise has {} channels, SDE has {}",
            noise.channels(),
            sde.channels()
        )));
    }
    if grid.x0.len() != sde.dim() {
        return Err(SchemeError::Mismatch(format!(
            "initial state of length {} for dimension {}",
            grid.x0.len(),
            sde.dim()
        )));
    }
    if scheme.needs_dz() && !noise.has_dz() {
        return Err(SchemeError::MissingDz);
    }
    Ok(())
}

fn guard(step: usize, y: &Vector) -> Result<(), SchemeError> {
    let norm = y.norm();
    if !norm.is_finite() || norm > BLOWUP_NORM {
        return Err(SchemeError::Diverged { step, norm });
    }
    Ok(())
}

/// Integrate and hand every state `(n, t_n, Y_n)` to `observe`, including
/// the initial one. Returns the final state.
pub fn integrate_observed<F>(
    sde: &SemiLinearSde,
    scheme: Scheme,
    grid: &IntegrationGrid,
    noise: &NoiseGrid,
    mut observe: F,
) -> Result<Vector, SchemeError>
where
    F: FnMut(usize, f64, &Vector),
{
    check_inputs(sde, scheme, grid, noise)?;
    let mut stepper = Stepper::new(sde, scheme)?;
    let h = grid.h();
    let mut y = grid.x0.clone();
    observe(0, grid.t0, &y);
    for n in 0..grid.steps {
        let t = grid.time(n);
        y = match stepper.step(t, &y, h, noise.dw(n), noise.dz(n)) {
            Ok(y) => y,
            Err(SchemeError::NonFinite) => {
                return Err(SchemeError::Diverged {
                    step: n + 1,
                    norm: f64::NAN,
                })
            }
            Err(e) => {
                return Err(SchemeError::Step {
                    step: n,
                    source: Box::new(e),
                })
            }
        };
        guard(n + 1, &y)?;
        observe(n + 1, grid.time(n + 1), &y);
    }
    Ok(y)
}

pub fn integrate_final(
    sde: &SemiLinearSde,
    scheme: Scheme,
    grid: &IntegrationGrid,
    noise: &NoiseGrid,
) -> Result<Vector, SchemeError> {
    integrate_observed(sde, scheme, grid, noise, |_, _, _| {})
}

pub fn integrate(
    sde: &SemiLinearSde,
    scheme: Scheme,
    grid: &IntegrationGrid,
    noise: &NoiseGrid,
) -> Result<Trajectory, SchemeError> {
    let mut times = Vec::with_capacity(grid.steps + 1);
    let mut states = Vec::with_capacity(grid.steps + 1);
    integrate_observed(sde, scheme, grid, noise, |_, t, y| {
        times.push(t);
        states.push(y.clone());
    })?;
    Ok(Trajectory { times, states })
}

/// Global Lawson integration: one transformed SDE for `V^0` on the whole
/// interval, mapped back with the accumulated exponent. Produces the same
/// points as [`integrate`] up to rounding; kept as an independent check.
pub fn integrate_global(
    sde: &SemiLinearSde,
    spec: SchemeSpec,
    grid: &IntegrationGrid,
    noise: &NoiseGrid,
) -> Result<Trajectory, SchemeError> {
    let scheme = Scheme::Lawson(spec);
    check_inputs(sde, scheme, grid, noise)?;
    spec.tableau.check_channels(sde.channels())?;
    let sde = sde.lawson_view(spec.mode);
    let h = grid.h();
    let channels = sde.channels();
    let mut w = vec![0.0; channels];
    let mut v0 = grid.x0.clone();
    let mut times = vec![grid.t0];
    let mut states = vec![grid.x0.clone()];
    let mut iterations = 0;
    let exponent = |elapsed: f64, w: &[f64]| sde.delta_l_unchecked(elapsed, w);
    for n in 0..grid.steps {
        let t = grid.time(n);
        let elapsed = t - grid.t0;
        let coeffs = spec.tableau.coefficients(h, noise.dw(n), noise.dz(n))?;
        let scale = 1.0 + max_abs(states.last().unwrap());
        let exp_of = |c0: f64, cm: &[f64]| {
            let shifted: Vec<f64> = w.iter().zip(cm).map(|(a, b)| a + b).collect();
            exp_pair(&exponent(elapsed + c0, &shifted))
        };
        v0 = run_stages(&sde, &coeffs, t, &v0, scale, exp_of, &mut iterations).map_err(|e| {
            SchemeError::Step {
                step: n,
                source: Box::new(e),
            }
        })?;
        for (wm, d) in w.iter_mut().zip(noise.dw(n)) {
            *wm += d;
        }
        let t1 = grid.time(n + 1);
        let y = apply(&exp_pair(&exponent(t1 - grid.t0, &w))?, v0.clone());
        guard(n + 1, &y)?;
        times.push(t1);
        states.push(y);
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Term;
    use crate::schemes::TableauKind;

    fn m1(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn em_dsl_hand_value() {
        let sde = SemiLinearSde::new(
            Interpretation::Ito,
            vec![m1(-1.0), m1(0.0)],
            vec![Term::linear(m1(0.5)), Term::linear(m1(0.3))],
        )
        .unwrap();
        let spec = SchemeSpec::new(TableauKind::EulerMaruyama, LawsonMode::Drift);
        let y = srk_lawson_step(&sde, spec, &v1(1.0), 0.0, 0.1, &[0.2], None).unwrap();
        let want = (-0.1f64).exp() * (1.0 + 0.05 + 0.06);
        assert!((y[0] - want).abs() < 1e-15);
        assert!((y[0] - 1.00437).abs() < 1e-5);
    }

    #[test]
    fn midpoint_deterministic_linear() {
        let lam = -3.0;
        let h = 0.1;
        let sde = SemiLinearSde::new(
            Interpretation::Stratonovich,
            vec![m1(0.0)],
            vec![Term::linear(m1(lam))],
        )
        .unwrap();
        let spec = SchemeSpec::new(TableauKind::Midpoint, LawsonMode::Full);
        let y = srk_lawson_step(&sde, spec, &v1(1.0), 0.0, h, &[], None).unwrap();
        let want = (1.0 + lam * h / 2.0) / (1.0 - lam * h / 2.0);
        assert!((y[0] - want).abs() < 1e-13);
    }

    #[test]
    fn midpoint_zero_remainder_needs_no_newton() {
        let sde = SemiLinearSde::new(
            Interpretation::Stratonovich,
            vec![m1(-0.5), m1(0.3)],
            vec![Term::zero(), Term::zero()],
        )
        .unwrap();
        let mut st = Stepper::new(&sde, Scheme::lawson(TableauKind::Midpoint, LawsonMode::Full)).unwrap();
        let y = st.step(0.0, &v1(2.0), 0.1, &[0.25], None).unwrap();
        assert_eq!(st.newton_iterations(), 0);
        let exact = sde.exact_linear_solution(0.0, 0.1, &v1(2.0), &[0.25]).unwrap();
        assert!((y[0] - exact[0]).abs() < 1e-15);
    }

    #[test]
    fn fast_paths_match_generic() {
        let sde = SemiLinearSde::new(
            Interpretation::Ito,
            vec![
                Matrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.3, -1.0]),
                Matrix::from_row_slice(2, 2, &[0.0, 0.2, -0.2, 0.0]),
            ],
            vec![
                Term::nonlinear(|t, x: &Vector| x.map(|v| (v + t).sin())),
                Term::nonlinear(|_, x: &Vector| x.map(|v| 0.1 * v.cos())),
            ],
        )
        .unwrap();
        let y = Vector::from_vec(vec![0.7, -0.4]);
        for mode in [LawsonMode::None, LawsonMode::Drift, LawsonMode::Full] {
            let em = em_sl_step(&sde, mode, &y, 0.2, 0.05, &[0.1]).unwrap();
            let gen = srk_lawson_step(&sde, SchemeSpec::new(TableauKind::EulerMaruyama, mode), &y, 0.2, 0.05, &[0.1], None)
                .unwrap();
            assert!((em - gen).amax() < 1e-15, "{mode:?}");
            let p = platen_sl_step(&sde, mode, &y, 0.2, 0.05, 0.1).unwrap();
            let gen = srk_lawson_step(&sde, SchemeSpec::new(TableauKind::Platen, mode), &y, 0.2, 0.05, &[0.1], None).unwrap();
            assert!((p - gen).amax() < 1e-15, "{mode:?}");
        }
    }
}
