//! Transforming step by step or once for the whole interval yields the same
//! approximation points.

use srk_lawson::linalg::{Matrix, Vector};
use srk_lawson::model::{IntegrationGrid, Interpretation, LawsonMode, SemiLinearSde, Term};
use srk_lawson::noise::sample_grid;
use srk_lawson::schemes::{integrate, integrate_global, Scheme, SchemeSpec, ALL_TABLEAUS};

fn main() {
    let a0 = Matrix::from_row_slice(2, 2, &[-2.0, 1.0, -1.0, -2.0]);
    let a1 = Matrix::from_row_slice(2, 2, &[0.0, 0.3, -0.3, 0.0]);
    let g0 = Term::nonlinear(|t, x: &Vector| Vector::from_vec(vec![x[1].sin(), t.cos() * x[0].tanh()]));
    let g1 = Term::nonlinear(|_, x: &Vector| x.map(|v| 0.1 * v.cos()));
    let sde = SemiLinearSde::new(Interpretation::Stratonovich, vec![a0, a1], vec![g0, g1]).unwrap();
    let grid = IntegrationGrid::new(0.0, 1.0, 200, Vector::from_vec(vec![1.0, 1.0])).unwrap();
    let noise = sample_grid(5, 0, 1, 200, grid.h(), true).unwrap();

    for kind in ALL_TABLEAUS {
        for mode in [LawsonMode::Drift, LawsonMode::Full] {
            let spec = SchemeSpec::new(kind, mode);
            let local = integrate(&sde, Scheme::Lawson(spec), &grid, &noise).unwrap();
            let global = integrate_global(&sde, spec, &grid, &noise).unwrap();
            let gap = local
                .states
                .iter()
                .zip(&global.states)
                .map(|(a, b)| (a - b).norm() / b.norm())
                .fold(0.0, f64::max);
            println!("{:<18} max relative gap {gap:.2e}", Scheme::Lawson(spec).to_string());
        }
    }
}
