//! A commuting linear SDE is integrated exactly by the full Lawson schemes,
//! whatever the step size; the plain schemes are not.

use srk_lawson::linalg::{Matrix, Vector};
use srk_lawson::model::{IntegrationGrid, Interpretation, LawsonMode, SemiLinearSde, Term};
use srk_lawson::noise::sample_grid;
use srk_lawson::schemes::{integrate_final, Scheme, TableauKind};

fn main() {
    let r = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
    let a0 = &r * 0.5;
    let a1 = Matrix::identity(2, 2) * 0.3 + &r * 0.1;
    let sde = SemiLinearSde::new(Interpretation::Ito, vec![a0, a1], vec![Term::zero(), Term::zero()])
        .expect("polynomials in r commute");
    let x0 = Vector::from_vec(vec![1.0, 0.0]);

    for steps in [4, 16, 64] {
        let grid = IntegrationGrid::new(0.0, 2.0, steps, x0.clone()).unwrap();
        let noise = sample_grid(1, 0, 1, steps, grid.h(), true).unwrap();
        let exact = sde.exact_linear_solution(0.0, 2.0, &x0, &[noise.total(0)]).unwrap();
        println!("N = {steps}");
        for kind in [TableauKind::EulerMaruyama, TableauKind::Platen, TableauKind::PlatenStrong15] {
            for mode in [LawsonMode::None, LawsonMode::Full] {
                let scheme = Scheme::lawson(kind, mode);
                let y = integrate_final(&sde, scheme, &grid, &noise).unwrap();
                println!("  {:<16} error {:.3e}", scheme.to_string(), (y - &exact).norm());
            }
        }
    }
}
