//! Second moments of the damped oscillator: Monte Carlo against the exact
//! moment equation and against iterating each scheme's stability matrix.

use srk_lawson::experiments::{iterate_moments, moment_evolution};
use srk_lawson::problems::{damped_oscillator, linear_parts};
use srk_lawson::stability::{scheme_stability_matrix, SchemeKind};

fn main() {
    let (lambda, omega_sq, sigma_sq, h) = (-3.0, 10.0 * std::f64::consts::PI, 4.0, 0.1);
    let p = damped_oscillator(lambda, omega_sq, f64::sqrt(sigma_sq));
    let (a, b) = linear_parts(&p).unwrap();
    let p0 = &p.x0 * p.x0.transpose();
    let steps = 30;

    for (name, kind) in [
        ("em-dsl", SchemeKind::EmDsl),
        ("platen-dsl", SchemeKind::PlatenDsl),
        ("implicit-platen", SchemeKind::ImplicitPlatenDerived),
    ] {
        let mc = moment_evolution(&p, name.parse().unwrap(), h, steps, 20_000, 3, None).unwrap();
        let s = scheme_stability_matrix(kind, &(&a * h), &[&b * h.sqrt()]).unwrap();
        let oracle = iterate_moments(&s, &p0, steps);
        let exact = mc.exact.as_ref().unwrap();
        println!("{name}");
        println!("  {:>5} {:>12} {:>12} {:>12}", "t", "MC E(X1^2)", "S^n P0", "exact");
        for n in (0..=steps).step_by(5) {
            println!(
                "  {:>5.2} {:>12.4e} {:>12.4e} {:>12.4e}",
                mc.times[n],
                mc.component(n, 0),
                oracle[n][0],
                exact[n][0]
            );
        }
    }
}
