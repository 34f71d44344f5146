//! Strong errors on the nonlinear test oscillator, measured against a
//! Platen 1.5 DSL reference on the same Brownian paths.
//!
//! `cargo run --release --example strong_convergence`

use srk_lawson::experiments::{strong_error, ExperimentConfig};
use srk_lawson::problems::nonlinear_oscillator;

fn main() {
    let schemes = ["em-dsl", "platen-dsl", "midpoint-fsl", "platen15-dsl"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let h = (5..=9).map(|k| 2f64.powi(-k)).collect();
    let mut cfg = ExperimentConfig::new(nonlinear_oscillator(1.0), schemes, h);
    cfg.batches = 4;
    cfg.paths_per_batch = 25;
    cfg.reference_refinement = 16;
    cfg.seed = 1;
    cfg.timing = true;

    let table = strong_error(&cfg).expect("no divergence at these step sizes");
    print!("{}", table.to_csv(&cfg.describe()));
    for row in &table.rows {
        println!("{:<14} measured order {:.2}", row.scheme, row.slope.unwrap());
    }
}
