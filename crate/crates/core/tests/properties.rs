use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use srk_lawson::experiments::{confidence_interval, estimate_order};
use srk_lawson::linalg::{self, Matrix, Vector};
use srk_lawson::model::{split_commuting, IntegrationGrid, Interpretation, LawsonMode, SemiLinearSde, Term};
use srk_lawson::noise::{sample_grid, NoiseGrid};
use srk_lawson::schemes::{integrate, Scheme, TableauKind, ALL_TABLEAUS};
use srk_lawson::stability::{
    self, r_em_dsl, r_platen_dsl, scheme_stability_matrix, sde_stability_matrix, SchemeKind, StabilityPoint,
};

fn matrix(d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| Matrix::from_row_slice(d, d, &v))
}

fn sized_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=4).prop_flat_map(matrix)
}

fn coeffs() -> impl Strategy<Value = [f64; 3]> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

fn poly(r: &Matrix, c: [f64; 3]) -> Matrix {
    let d = r.nrows();
    Matrix::identity(d, d) * c[0] + r * c[1] + r * r * c[2]
}

fn two_norm(a: &Matrix) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expm_adds_for_commuting(r in sized_matrix(), a in coeffs(), b in coeffs()) {
        let (x, y) = (poly(&r, a), poly(&r, b));
        prop_assume!(linalg::is_commuting(&x, &y, 1e-14).unwrap());
        let lhs = linalg::expm(&x).unwrap() * linalg::expm(&y).unwrap();
        let rhs = linalg::expm(&(&x + &y)).unwrap();
        prop_assert!((lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn expm_of_skew_is_orthogonal(m in sized_matrix(), scale in 0.1f64..20.0) {
        let s = (&m - m.transpose()) * scale;
        let n = two_norm(&linalg::expm(&s).unwrap());
        prop_assert!((n - 1.0).abs() <= 1e-12, "norm {}", n);
    }

    #[test]
    fn kron_squares_spectral_radius(a in sized_matrix()) {
        let r = linalg::spectral_radius(&a).unwrap();
        let rk = linalg::spectral_radius(&linalg::kron(&a, &a)).unwrap();
        prop_assert!((rk - r * r).abs() <= 1e-9 * (1.0 + r * r));
    }

    #[test]
    fn commutator_bilinear_antisymmetric(
        (a, b, c) in (1usize..=3).prop_flat_map(|d| (matrix(d), matrix(d), matrix(d))),
        s in -2.0f64..2.0,
    ) {
        let ab = linalg::commutator(&a, &b).unwrap();
        let ba = linalg::commutator(&b, &a).unwrap();
        prop_assert!((&ab + &ba).norm() <= 1e-14);
        let lhs = linalg::commutator(&(&a * s + &c), &b).unwrap();
        let rhs = ab * s + linalg::commutator(&c, &b).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-13);
    }

    #[test]
    fn linear_flow_property(r in sized_matrix(), a in coeffs(), b in coeffs(), w1 in -2.0f64..2.0, w2 in -2.0f64..2.0) {
        let d = r.nrows();
        let sde = SemiLinearSde::new(
            Interpretation::Ito,
            vec![poly(&r, a), poly(&r, b)],
            vec![Term::zero(), Term::zero()],
        ).unwrap();
        let x0 = Vector::from_element(d, 1.0);
        let x1 = sde.exact_linear_solution(0.0, 0.4, &x0, &[w1]).unwrap();
        let x2 = sde.exact_linear_solution(0.4, 1.0, &x1, &[w2]).unwrap();
        let direct = sde.exact_linear_solution(0.0, 1.0, &x0, &[w1 + w2]).unwrap();
        prop_assert!((&x2 - &direct).norm() <= 1e-10 * (1.0 + direct.norm()));
    }

    #[test]
    fn delta_l_is_homogeneous(r in sized_matrix(), a in coeffs(), b in coeffs(), h in 0.01f64..1.0, w in -2.0f64..2.0, s in 0.1f64..3.0) {
        let sde = SemiLinearSde::new(
            Interpretation::Stratonovich,
            vec![poly(&r, a), poly(&r, b)],
            vec![Term::zero(), Term::zero()],
        ).unwrap();
        let lhs = sde.delta_l(s * h, &[s * w]).unwrap();
        let rhs = sde.delta_l(h, &[w]).unwrap() * s;
        prop_assert!((&lhs - &rhs).norm() <= 1e-14 * (1.0 + rhs.norm()));
    }

    #[test]
    fn g_tilde_of_noise_channels_is_g(r in sized_matrix(), a in coeffs(), b in coeffs(), t in 0.0f64..1.0) {
        let d = r.nrows();
        let m = r.clone();
        let sde = SemiLinearSde::new(
            Interpretation::Ito,
            vec![poly(&r, a), poly(&r, b)],
            vec![Term::constant(Vector::from_element(d, 0.5)), Term::nonlinear(move |t, x: &Vector| &m * x.map(f64::tanh) * (1.0 + t))],
        ).unwrap();
        let x = Vector::from_fn(d, |i, _| 0.3 * i as f64 - 0.2);
        prop_assert_eq!(sde.g_tilde(1, t, &x).unwrap(), sde.term(1).eval(t, &x));
    }

    #[test]
    fn split_commuting_is_exact(a in sized_matrix(), b in sized_matrix()) {
        prop_assume!(a.shape() == b.shape());
        let (a0, resid) = split_commuting(&a, &b).unwrap();
        // exact up to the rounding of the products c A1 A1 and A1 c A1
        let scale = 1.0 + a.norm() * b.norm();
        prop_assert!(linalg::commutator(&a0, &b).unwrap().norm() <= 1e-15 * scale);
        prop_assert!((&a0 + &resid - &a).norm() <= 1e-15 * (1.0 + a.norm()));
    }

    #[test]
    fn coarsening_is_associative(seed in any::<u64>(), path in 0u64..1000, channels in 1usize..=2) {
        let g = sample_grid(seed, path, channels, 64, 1.0 / 64.0, channels == 1).unwrap();
        let twice = g.coarsen(2).unwrap().coarsen(4).unwrap();
        let once = g.coarsen(8).unwrap();
        for n in 0..8 {
            prop_assert_eq!(twice.dw(n), once.dw(n));
            prop_assert_eq!(twice.dz(n), once.dz(n));
        }
        for c in 0..channels {
            prop_assert!((once.total(c) - g.total(c)).abs() <= 1e-14);
        }
    }

    #[test]
    fn dsl_and_fsl_coincide_without_noise_matrices(r in matrix(2), a in coeffs(), seed in 0u64..1000) {
        let m = r.clone();
        let sde = SemiLinearSde::new(
            Interpretation::Ito,
            vec![poly(&r, a), Matrix::zeros(2, 2)],
            vec![
                Term::nonlinear(|_, x: &Vector| x.map(f64::sin) * 0.5),
                Term::nonlinear(move |_, x: &Vector| &m * x.map(f64::cos) * 0.3),
            ],
        ).unwrap();
        let grid = IntegrationGrid::new(0.0, 1.0, 20, Vector::from_vec(vec![1.0, -0.5])).unwrap();
        let noise = sample_grid(seed, 0, 1, 20, grid.h(), true).unwrap();
        for kind in ALL_TABLEAUS {
            let d = integrate(&sde, Scheme::lawson(kind, LawsonMode::Drift), &grid, &noise).unwrap();
            let f = integrate(&sde, Scheme::lawson(kind, LawsonMode::Full), &grid, &noise).unwrap();
            prop_assert_eq!(d, f);
        }
    }

    #[test]
    fn scalar_stability_consistency(h in 0.01f64..2.0, l in -5.0f64..1.0, s in -2.0f64..2.0, m in -2.0f64..2.0) {
        let p = StabilityPoint::new(h, Complex64::new(l, 0.0), Complex64::new(s, 0.0), Complex64::new(m, 0.0));
        let one = |v: f64| Matrix::from_element(1, 1, v);
        // whole drift in the exponent: the remainder sigma x is set to zero
        let p0 = StabilityPoint::new(h, Complex64::new(l + s, 0.0), Complex64::new(0.0, 0.0), Complex64::new(m, 0.0));
        let abar = one((l + s) * h);
        let bbar = one(m * h.sqrt());
        let em = scheme_stability_matrix(SchemeKind::EmDsl, &abar, &[bbar.clone()]).unwrap()[(0, 0)];
        let pl = scheme_stability_matrix(SchemeKind::PlatenDsl, &abar, &[bbar]).unwrap()[(0, 0)];
        prop_assert!((em - r_em_dsl(p0)).abs() <= 1e-12 * (1.0 + em.abs()));
        prop_assert!((pl - r_platen_dsl(p0)).abs() <= 1e-12 * (1.0 + pl.abs()));
        prop_assert!(r_em_dsl(p) >= 0.0);
    }

    #[test]
    fn sufficient_conditions_imply_stability(l in -5.0f64..0.0, s in -5.0f64..5.0, m in -3.0f64..3.0) {
        let (lc, sc, mc) = (Complex64::new(l, 0.0), Complex64::new(s, 0.0), Complex64::new(m, 0.0));
        let hs = (0..=40).map(|k| 10f64.powf(-3.0 + 4.0 * k as f64 / 40.0));
        for h in hs {
            let p = StabilityPoint::new(h, lc, sc, mc);
            if stability::sufficient_em_dsl(lc, sc, mc) {
                prop_assert!(r_em_dsl(p) <= 1.0 + 1e-12, "em h={} R={}", h, r_em_dsl(p));
            }
            if stability::sufficient_platen_dsl(lc, sc, mc) {
                prop_assert!(r_platen_dsl(p) <= 1.0 + 1e-12, "platen h={} R={}", h, r_platen_dsl(p));
            }
        }
    }

    #[test]
    fn exact_boundary_matches_sde_matrix(lh in -3.0f64..0.0, s2h in 0.0f64..6.0, w in 0.0f64..10.0) {
        for p in [stability::RegionProblem::Orthogonal { bh: 0.0 }, stability::RegionProblem::Oscillator { omega2_h: w }] {
            let (a, b) = p.matrices(lh, s2h);
            let s = sde_stability_matrix(&a, &[b]).unwrap();
            let abscissa = linalg::spectral_abscissa(&s).unwrap();
            prop_assert!((abscissa - (2.0 * lh + s2h)).abs() <= 1e-10);
        }
    }

    #[test]
    fn order_of_clean_power_law(p in 0.3f64..3.0, c in 0.01f64..100.0) {
        let h: Vec<f64> = (3..9).map(|k| 2f64.powi(-k)).collect();
        let e: Vec<f64> = h.iter().map(|x| c * x.powf(p)).collect();
        let (s, _) = estimate_order(&h, &e).unwrap();
        prop_assert!((s - p).abs() < 1e-10);
        let (s5, _) = estimate_order(&h[1..], &e[1..]).unwrap();
        prop_assert!((s5 - s).abs() < 0.1);
    }
}

#[test]
fn confidence_interval_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let reps = 10_000;
    let mut hits = 0;
    for _ in 0..reps {
        let batches: Vec<f64> = (0..10)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                3.0 + 0.5 * z
            })
            .collect();
        let mean = batches.iter().sum::<f64>() / 10.0;
        let hw = confidence_interval(&batches, 0.95).unwrap();
        if (mean - 3.0).abs() <= hw {
            hits += 1;
        }
    }
    let coverage = hits as f64 / reps as f64;
    assert!((coverage - 0.95).abs() < 0.01, "coverage {coverage}");
}

#[test]
fn noise_streams_are_uncorrelated() {
    let n = 100_000;
    let a = sample_grid(1, 0, 1, n, 1.0, false).unwrap();
    let b = sample_grid(1, 1, 1, n, 1.0, false).unwrap();
    let corr: f64 = (0..n).map(|k| a.dw(k)[0] * b.dw(k)[0]).sum::<f64>() / n as f64;
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
}

#[test]
fn strong_self_convergence() {
    let p = srk_lawson::problems::nonlinear_oscillator(1.0);
    let cases = [
        (TableauKind::EulerMaruyama, LawsonMode::Drift, 0.5),
        (TableauKind::Platen, LawsonMode::Drift, 1.0),
        (TableauKind::PlatenStrong15, LawsonMode::Drift, 1.5),
    ];
    let paths = 200;
    let finest = 1024;
    for (kind, mode, order) in cases {
        let scheme = Scheme::lawson(kind, mode);
        // errors between steps N and 2N for N = 64, 128, 256
        let mut errs = [0.0f64; 3];
        for path in 0..paths {
            let fine: NoiseGrid = sample_grid(77, path, 1, finest, 1.0 / finest as f64, true).unwrap();
            let mut finals = Vec::new();
            for factor in [16, 8, 4, 2] {
                let g = fine.coarsen(factor).unwrap();
                let grid = IntegrationGrid::new(0.0, 1.0, finest / factor, p.x0.clone()).unwrap();
                finals.push(integrate(&p.sde, scheme, &grid, &g).unwrap().last().clone());
            }
            for k in 0..3 {
                errs[k] += (&finals[k] - &finals[k + 1]).norm() / paths as f64;
            }
        }
        let want = 2f64.powf(order);
        for k in 0..2 {
            let ratio = errs[k] / errs[k + 1];
            assert!(
                (ratio - want).abs() <= 0.3 * want,
                "{scheme}: ratio {ratio} vs {want}"
            );
        }
    }
}
