//! Dense matrix utilities used throughout the crate.
//!
//! Storage, LU factorisation and the real Schur decomposition come from
//! `nalgebra`; the matrix exponential is a scaling-and-squaring Padé
//! implementation (Higham 2005) kept here so the identity case is exact and
//! the degree selection is visible.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative tolerance for commutativity checks.
pub const COMMUTE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigenvalue iteration did not converge for {0}x{0} matrix")]
    EigenNoConvergence(usize),
    #[error("singular or ill-conditioned system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
}

pub fn ensure_square(a: &Matrix) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

pub fn ensure_finite(a: &Matrix) -> Result<(), LinalgError> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Maximum absolute column sum.
pub fn norm_1(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_max(a: &Matrix) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with a Padé core of degree
/// 3, 5, 7, 9 or 13 chosen from the 1-norm.
pub fn expm(a: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    if a.iter().all(|&x| x == 0.0) {
        return Ok(ident);
    }
    let norm = norm_1(a);

    if norm <= THETA_9 {
        let coeffs: &[f64] = if norm <= THETA_3 {
            &PADE_3
        } else if norm <= THETA_5 {
            &PADE_5
        } else if norm <= THETA_7 {
            &PADE_7
        } else {
            &PADE_9
        };
        let a2 = a * a;
        // odd part U = A * sum b_{2k+1} A^{2k}, even part V = sum b_{2k} A^{2k}
        let mut power = ident.clone();
        let mut u = &ident * 0.0;
        let mut v = &ident * 0.0;
        for k in 0..coeffs.len() / 2 {
            v += &power * coeffs[2 * k];
            u += &power * coeffs[2 * k + 1];
            power = &power * &a2;
        }
        let u = a * u;
        return pade_solve(&u, &v);
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a * 2f64.powi(-s);
    let b = &PADE_13;
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    let mut r = pade_solve(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_solve(u: &Matrix, v: &Matrix) -> Result<Matrix, LinalgError> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(LinalgError::Singular {
        condition: f64::INFINITY,
    })
}

/// Kronecker product with the standard block layout.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// All eigenvalues of a square matrix via the real Schur form.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>, LinalgError> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let n = a.nrows();
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or(LinalgError::EigenNoConvergence(n))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

pub fn spectral_radius(a: &Matrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &Matrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn commutator(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(a)?;
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch(format!(
            "commutator of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a * b - b * a)
}

/// `true` iff `max|AB - BA| <= tol * (1 + ||A|| ||B||)` (max-norms).
pub fn is_commuting(a: &Matrix, b: &Matrix, tol: f64) -> Result<bool, LinalgError> {
    let c = commutator(a, b)?;
    Ok(norm_max(&c) <= tol * (1.0 + norm_max(a) * norm_max(b)))
}

/// Solve `A x = rhs` for a vector or matrix right-hand side.
pub fn solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(a)?;
    if rhs.nrows() != a.nrows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "solve: {}x{} system with {} rhs rows",
            a.nrows(),
            a.ncols(),
            rhs.nrows()
        )));
    }
    let lu = a.clone().lu();
    let inv = lu.try_inverse();
    let condition = match &inv {
        Some(inv) => norm_1(a) * norm_1(inv),
        None => f64::INFINITY,
    };
    if !condition.is_finite() || condition > 1e14 {
        return Err(LinalgError::Singular { condition });
    }
    lu.solve(rhs).ok_or(LinalgError::Singular { condition })
}

pub fn solve_vec(a: &Matrix, rhs: &Vector) -> Result<Vector, LinalgError> {
    let m = Matrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let x = solve(a, &m)?;
    Ok(Vector::from_column_slice(x.as_slice()))
}

/// Row-major vectorisation of a square matrix; matches `kron(A, A)` acting
/// as `P -> A P A^T`.
pub fn vec_rows(p: &Matrix) -> Vector {
    Vector::from_iterator(p.len(), p.transpose().iter().copied())
}

pub fn unvec_rows(v: &Vector, d: usize) -> Matrix {
    Matrix::from_row_slice(d, d, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_exp(a: &Matrix) -> Matrix {
        let n = a.nrows();
        let mut term = Matrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity_bitwise() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(expm(&z).unwrap(), Matrix::identity(2, 2));
    }

    #[test]
    fn expm_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.7, -2.5]));
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - 0.7f64.exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-2.5f64).exp()).abs() < 1e-16);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rotation() {
        let th = 0.3;
        let a = Matrix::from_row_slice(2, 2, &[0.0, th, -th, 0.0]);
        let e = expm(&a).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[th.cos(), th.sin(), -th.sin(), th.cos()]);
        assert!((&e - &expected).abs().max() < 1e-15);
        assert!((&series_exp(&a) - &expected).abs().max() < 1e-14);
    }

    #[test]
    fn expm_large_norm_against_series() {
        // norm ~ 9 forces scaling; compare with series on the scaled matrix squared
        let a = Matrix::from_row_slice(3, 3, &[-3.0, 1.0, 0.5, 2.0, -4.0, 1.0, 0.3, 0.2, -2.0]);
        let e = expm(&a).unwrap();
        let half = series_exp(&(&a / 16.0));
        let mut r = half;
        for _ in 0..4 {
            r = &r * &r;
        }
        let rel = (&e - &r).abs().max() / r.abs().max();
        assert!(rel < 1e-12, "rel {rel}");
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(
            expm(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert_eq!(expm(&a), Err(LinalgError::NonFinite));
    }

    #[test]
    fn kron_blocks() {
        let i2 = Matrix::identity(2, 2);
        assert_eq!(kron(&i2, &i2), Matrix::identity(4, 4));
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0]));
        let b = Matrix::from_diagonal(&Vector::from_vec(vec![5.0, 7.0]));
        let k = kron(&a, &b);
        let d: Vec<f64> = (0..4).map(|i| k[(i, i)]).collect();
        assert_eq!(d, vec![10.0, 14.0, 15.0, 21.0]);
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&Matrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, -3.0]));
        assert!((spectral_radius(&d).unwrap() - 3.0).abs() < 1e-12);
        let r = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((spectral_radius(&r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn commutator_examples() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(commutator(&a, &a).unwrap(), Matrix::zeros(2, 2));
        assert_eq!(
            commutator(&Matrix::identity(2, 2), &a).unwrap(),
            Matrix::zeros(2, 2)
        );
        // [[l,b],[0,l]] against [[0,s],[-s,0]]: hand product gives [[-b s, 0],[0, b s]]
        let (l, b, s) = (-1.0, 1.0, 1.0);
        let a0 = Matrix::from_row_slice(2, 2, &[l, b, 0.0, l]);
        let b1 = Matrix::from_row_slice(2, 2, &[0.0, s, -s, 0.0]);
        let c = commutator(&a0, &b1).unwrap();
        assert_eq!(c, Matrix::from_row_slice(2, 2, &[-b * s, 0.0, 0.0, b * s]));
        assert!(!is_commuting(&a0, &b1, COMMUTE_TOL).unwrap());
        assert!(commutator(&a0, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn solve_examples() {
        let b = Vector::from_vec(vec![1.0, -2.0]);
        assert_eq!(solve_vec(&Matrix::identity(2, 2), &b).unwrap(), b);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
        let x = solve_vec(&d, &Vector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_eq!(x, Vector::from_vec(vec![1.0, 1.0]));
        let singular = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            solve_vec(&singular, &b),
            Err(LinalgError::Singular { .. })
        ));
    }

    #[test]
    fn vec_matches_kron_congruence() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let p = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let lhs = vec_rows(&(&a * &p * a.transpose()));
        let rhs = kron(&a, &a) * vec_rows(&p);
        assert!((lhs - rhs).abs().max() < 1e-13);
        assert_eq!(unvec_rows(&vec_rows(&p), 2), p);
    }
}
