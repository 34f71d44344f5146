//! Defining a semi-linear SDE by hand: a stochastic Allen-Cahn type
//! system with a stiff linear part and a cubic remainder.

use srk_lawson::experiments::sde_for;
use srk_lawson::linalg::{Matrix, Vector};
use srk_lawson::model::{IntegrationGrid, Interpretation, SemiLinearSde, Term};
use srk_lawson::noise::sample_grid;
use srk_lawson::schemes::{integrate, Scheme};

fn main() {
    let d = 8;
    // discrete Laplacian with Dirichlet ends, scaled to be stiff
    let lap = Matrix::from_fn(d, d, |i, j| match (i as i64 - j as i64).abs() {
        0 => -2.0,
        1 => 1.0,
        _ => 0.0,
    }) * 50.0;
    let noise_matrix = Matrix::identity(d, d) * 0.2;
    let cubic = Term::nonlinear(|_, x: &Vector| x.map(|u| u - u * u * u))
        .with_jacobian(|_, x: &Vector| Matrix::from_diagonal(&x.map(|u| 1.0 - 3.0 * u * u)));
    let sde = SemiLinearSde::new(
        Interpretation::Ito,
        vec![lap, noise_matrix],
        vec![cubic, Term::zero()],
    )
    .expect("identity commutes with everything");

    let x0 = Vector::from_fn(d, |i, _| (std::f64::consts::PI * (i + 1) as f64 / (d + 1) as f64).sin());
    let grid = IntegrationGrid::new(0.0, 1.0, 50, x0).unwrap();
    let noise = sample_grid(2024, 0, 1, 50, grid.h(), true).unwrap();
    for name in ["em-raw", "em-dsl", "platen-fsl", "midpoint-fsl"] {
        let scheme: Scheme = name.parse().unwrap();
        // the midpoint rule is applied to the Stratonovich form
        let native = sde_for(scheme, &sde).unwrap();
        match integrate(&native, scheme, &grid, &noise) {
            Ok(t) => println!("{name:<14} |Y_N| = {:.6}", t.last().norm()),
            Err(e) => println!("{name:<14} failed: {e}"),
        }
    }
}
