//! Weak errors for E X(T)^2 of geometric Brownian motion. The exact
//! solution on the same path serves as reference, which removes most of the
//! Monte Carlo noise from the differences.

use srk_lawson::experiments::{weak_error, ExperimentConfig, Functional, WeakReference};
use srk_lawson::problems::gbm;

fn main() {
    let schemes = ["em-dsl", "em-raw", "platen-weak2-dsl"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let h = (1..=5).map(|k| 2f64.powi(-k)).collect();
    let mut cfg = ExperimentConfig::new(gbm(-1.0, 0.5), schemes, h);
    cfg.batches = 20;
    cfg.paths_per_batch = 500;
    cfg.functional = Functional::first_squared();
    cfg.weak_reference = WeakReference::ExactPath;

    let table = weak_error(&cfg).unwrap();
    for row in &table.rows {
        println!("{}", row.scheme);
        for ((h, e), ci) in table.h.iter().zip(&row.errors).zip(&row.ci) {
            println!("  h = {h:<8} |E f(Y) - E f(X)| = {e:.3e} +- {ci:.1e}");
        }
        println!("  slope {:.2}", row.slope.unwrap());
    }
}
