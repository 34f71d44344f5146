//! Ready-made test problems.

use crate::linalg::{Matrix, Vector};
use crate::model::{Interpretation, SemiLinearSde, Term};

/// An SDE together with its initial value and time interval.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub sde: SemiLinearSde,
    pub x0: Vector,
    pub t0: f64,
    pub t_end: f64,
}

/// The 2x2 rotation generator `[[0, 1], [-1, 0]]`.
pub fn rotation_generator() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

/// Nonlinear oscillator perturbed by a linear attractor (Itô):
///
/// ```text
/// dX = [-lambda X + U(X) J X] dt + 0.2 J X dW,   U(X) = (x1 + x2)^5 / 5
/// ```
///
/// with `X(0) = (1, 0)` on `[0, 1]`. Its norm evolves deterministically,
/// `|X(t)| = exp((0.02 - lambda) t)`.
pub fn nonlinear_oscillator(lambda: f64) -> Problem {
    let j = rotation_generator();
    let a0 = Matrix::identity(2, 2) * -lambda;
    let a1 = &j * 0.2;
    let g0 = Term::nonlinear(|_, x: &Vector| {
        let u = (x[0] + x[1]).powi(5) / 5.0;
        Vector::from_vec(vec![u * x[1], -u * x[0]])
    })
    .with_jacobian(|_, x: &Vector| {
        let s = x[0] + x[1];
        let u = s.powi(5) / 5.0;
        let du = s.powi(4);
        Matrix::from_row_slice(2, 2, &[du * x[1], du * x[1] + u, -du * x[0] - u, -du * x[0]])
    });
    let sde = SemiLinearSde::new(Interpretation::Ito, vec![a0, a1], vec![g0, Term::zero()])
        .expect("multiples of I and J commute");
    Problem {
        name: format!("nonlinear-oscillator(lambda={lambda})"),
        sde,
        x0: Vector::from_vec(vec![1.0, 0.0]),
        t0: 0.0,
        t_end: 1.0,
    }
}

/// Stratonovich form of [`nonlinear_oscillator`].
pub fn nonlinear_oscillator_stratonovich(lambda: f64) -> Problem {
    let mut p = nonlinear_oscillator(lambda);
    p.sde = p
        .sde
        .stratonovich_from_ito()
        .expect("diffusion is linear, no Jacobian needed");
    p.name = format!("nonlinear-oscillator-stratonovich(lambda={lambda})");
    p
}

/// Scalar test equation `dX = (lambda + sigma) X dt + mu X dW`, split as
/// `A_0 = lambda`, `g_0 = sigma x`, `A_1 = 0`, `g_1 = mu x`. `X(0) = 1`.
pub fn scalar_linear(lambda: f64, sigma: f64, mu: f64) -> Problem {
    let one = |v: f64| Matrix::from_element(1, 1, v);
    let sde = SemiLinearSde::new(
        Interpretation::Ito,
        vec![one(lambda), one(0.0)],
        vec![Term::linear(one(sigma)), Term::linear(one(mu))],
    )
    .expect("scalars commute");
    Problem {
        name: format!("scalar-linear(lambda={lambda},sigma={sigma},mu={mu})"),
        sde,
        x0: Vector::from_element(1, 1.0),
        t0: 0.0,
        t_end: 1.0,
    }
}

/// Geometric Brownian motion `dX = lambda X dt + mu X dW`, `X(0) = 1`.
pub fn gbm(lambda: f64, mu: f64) -> Problem {
    let mut p = scalar_linear(lambda, 0.0, mu);
    p.name = format!("gbm(lambda={lambda},mu={mu})");
    p
}

/// `dX = [[lambda, b], [0, lambda]] X dt + sigma J X dW`. The drift does not
/// commute with the noise for `b, sigma != 0`, so the noise matrix is kept in
/// `g_1`. `X(0) = (1, 1)`.
pub fn orthogonal_noise(lambda: f64, b: f64, sigma: f64) -> Problem {
    let a0 = Matrix::from_row_slice(2, 2, &[lambda, b, 0.0, lambda]);
    let sde = SemiLinearSde::new(
        Interpretation::Ito,
        vec![a0, Matrix::zeros(2, 2)],
        vec![Term::zero(), Term::linear(rotation_generator() * sigma)],
    )
    .expect("zero noise matrix commutes");
    Problem {
        name: format!("orthogonal-noise(lambda={lambda},b={b},sigma={sigma})"),
        sde,
        x0: Vector::from_vec(vec![1.0, 1.0]),
        t0: 0.0,
        t_end: 1.0,
    }
}

/// Damped (lambda < 0) or driven oscillator
/// `dX = [[lambda, w2], [-w2, lambda]] X dt + sigma J X dW`. Drift and noise
/// commute, so the noise matrix is stored as `A_1`. `X(0) = (1, 1)`.
pub fn damped_oscillator(lambda: f64, omega_sq: f64, sigma: f64) -> Problem {
    let a0 = Matrix::from_row_slice(2, 2, &[lambda, omega_sq, -omega_sq, lambda]);
    let sde = SemiLinearSde::new(
        Interpretation::Ito,
        vec![a0, rotation_generator() * sigma],
        vec![Term::zero(), Term::zero()],
    )
    .expect("aI + bJ matrices commute");
    Problem {
        name: format!("oscillator(lambda={lambda},omega2={omega_sq},sigma={sigma})"),
        sde,
        x0: Vector::from_vec(vec![1.0, 1.0]),
        t0: 0.0,
        t_end: 1.0,
    }
}

/// Drift and noise matrices `(A_0, B_1)` of a linear single-channel problem,
/// wherever the noise matrix is stored.
pub fn linear_parts(p: &Problem) -> Option<(Matrix, Matrix)> {
    let sde = &p.sde;
    if sde.channels() != 1 {
        return None;
    }
    let mut out = Vec::new();
    for m in 0..2 {
        let term = sde.term(m);
        if !term.is_affine() || term.constant_part().is_some() {
            return None;
        }
        let mut a = sde.linear(m).clone();
        if let Some(l) = term.linear_part() {
            a += l;
        }
        out.push(a);
    }
    let b = out.pop()?;
    let a = out.pop()?;
    Some((a, b))
}
