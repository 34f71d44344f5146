//! Mean-square stability boundaries for the orthogonal-noise system and
//! classification of a few marked points.

use srk_lawson::stability::{
    linspace, point_rho, region_scan, RegionKind, RegionProblem, RegionScan, SchemeKind,
};

fn main() {
    let problem = RegionProblem::Orthogonal { bh: 1.0 };
    let kinds = [
        RegionKind::Scheme(SchemeKind::EmDsl),
        RegionKind::Scheme(SchemeKind::PlatenDsl),
        RegionKind::Scheme(SchemeKind::ImplicitPlatenDerived),
        RegionKind::Exact,
    ];
    let grid = linspace(-3.0, 0.0, 13);
    let scan = RegionScan::default();
    println!("{:>8} {}", "lambda h", kinds.map(|k| format!("{:>24}", k.name())).join(""));
    let curves: Vec<_> = kinds
        .iter()
        .map(|&k| region_scan(problem, k, &grid, &scan).unwrap())
        .collect();
    for (i, l) in grid.iter().enumerate() {
        let cells: Vec<String> = curves
            .iter()
            .map(|c| match c[i].sigma2_h {
                Some(s) => format!("{s:>24.4}"),
                None => format!("{:>24}", format!("{:?}", c[i].status)),
            })
            .collect();
        println!("{l:>8.2} {}", cells.join(""));
    }

    for (lh, s2h) in [(-2.0, 2.5), (-1.0, 2.5)] {
        println!("\nlambda h = {lh}, sigma^2 h = {s2h}");
        for k in kinds {
            let r = point_rho(problem, k, lh, s2h).unwrap();
            println!("  {:<24} rho = {r:.4} {}", k.name(), if r < 1.0 { "stable" } else { "unstable" });
        }
    }
}
