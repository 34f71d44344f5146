//! Drift-implicit Platen order 1.0 scheme for a single Itô channel:
//!
//! ```text
//! Y+ = Y + h a(t+h, Y+) + b dW + (dW^2 - h)/(2 sqrt h) [b(t+h, U) - b(t, Y)]
//! U  = Y + a(t, Y) h + b(t, Y) sqrt h
//! ```

use crate::linalg::{self, Matrix, Vector};
use crate::model::{Interpretation, SemiLinearSde};

use super::{SchemeError, NEWTON_MAX_ITER, NEWTON_TOL};

/// One step of the comparator. The SDE must be in Itô form with `M = 1`.
pub fn implicit_platen_step(
    sde: &SemiLinearSde,
    y: &Vector,
    t: f64,
    h: f64,
    dw: f64,
) -> Result<Vector, SchemeError> {
    if sde.channels() != 1 {
        return Err(SchemeError::Channels {
            scheme: "implicit-platen",
            channels: sde.channels(),
        });
    }
    if sde.interpretation() != Interpretation::Ito {
        return Err(SchemeError::Mismatch(
            "implicit Platen needs the Itô form of the SDE".into(),
        ));
    }
    let mut iterations = 0;
    implicit_platen_raw(sde, y, t, h, dw, &mut iterations)
}

pub(crate) fn implicit_platen_raw(
    sde: &SemiLinearSde,
    y: &Vector,
    t: f64,
    h: f64,
    dw: f64,
    iterations: &mut usize,
) -> Result<Vector, SchemeError> {
    let sh = h.sqrt();
    let a = sde.drift(t, y);
    let b = sde.coefficient(1, t, y);
    let support = y + &a * h + &b * sh;
    let b_support = sde.coefficient(1, t + h, &support);
    let explicit = y + &b * dw + (b_support - &b) * ((dw * dw - h) / (2.0 * sh));

    let a0 = sde.linear(0);
    let g0 = sde.term(0);
    let zero_drift = g0.is_zero() && a0.iter().all(|&x| x == 0.0);
    if zero_drift {
        return Ok(explicit);
    }
    let d = y.len();
    let t1 = t + h;
    if g0.is_affine() {
        let mut lin = a0.clone();
        if let Some(l) = g0.linear_part() {
            lin += l;
        }
        let mut rhs = explicit;
        if let Some(c) = g0.constant_part() {
            rhs.axpy(h, c, 1.0);
        }
        let m = Matrix::identity(d, d) - lin * h;
        return Ok(linalg::solve_vec(&m, &rhs)?);
    }

    // Modified Newton on F(Z) = Z - explicit - h a(t+h, Z), Jacobian at Y.
    let residual = |z: &Vector| z - &explicit - sde.drift(t1, z) * h;
    let jac = match g0.jacobian(t1, y) {
        Some(j) => Matrix::identity(d, d) - (a0 + j) * h,
        None => {
            let r0 = residual(y);
            let mut j = Matrix::zeros(d, d);
            for c in 0..d {
                let delta = f64::EPSILON.sqrt() * (1.0 + y[c].abs());
                let mut yp = y.clone();
                yp[c] += delta;
                j.set_column(c, &((residual(&yp) - &r0) / delta));
            }
            j
        }
    };
    let lu = jac.lu();
    let tol = NEWTON_TOL * (1.0 + y.amax());
    let mut z = &explicit + &a * h;
    let mut r = residual(&z);
    for it in 0..=NEWTON_MAX_ITER {
        let res = r.amax();
        if !res.is_finite() {
            return Err(SchemeError::NonFinite);
        }
        if res <= tol {
            return Ok(z);
        }
        if it == NEWTON_MAX_ITER {
            return Err(SchemeError::NewtonFailed {
                residual: res,
                iterations: it,
            });
        }
        let delta = lu.solve(&r).ok_or(linalg::LinalgError::Singular {
            condition: f64::INFINITY,
        })?;
        z -= delta;
        r = residual(&z);
        *iterations += 1;
    }
    unreachable!()
}
