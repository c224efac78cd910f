use std::f64::consts::PI;

use proptest::prelude::*;

use hillgap_core::coefficients::{make_builtin, moment_norm, Coefficients, CoefficientModel, PerturbationTerm, PerturbedPair, Profile};
use hillgap_core::floquet::{self, Structure};
use hillgap_core::oracle::{discretize, LeftBoundary};
use hillgap_core::perturb::{self, VolterraOptions, VolterraSetup};
use hillgap_core::quadode::{propagate_state, transfer_matrix, wronskian, StateVector, DEFAULT_TOL};

fn families() -> Vec<CoefficientModel> {
    vec![
        make_builtin("free", &[PI]).unwrap(),
        make_builtin("free", &[1.0]).unwrap(),
        make_builtin("const_shift", &[2.0]).unwrap(),
        make_builtin("mathieu", &[1.0]).unwrap(),
        make_builtin("layered", &[2.0, 0.4, 1.0, 0.5, 0.0, 3.0, 1.0, 2.0]).unwrap(),
    ]
}

fn well_pair() -> PerturbedPair {
    let base = make_builtin("mathieu", &[1.0]).unwrap();
    PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::SquareWell { depth: -5.0, start: 0.5, width: 2.0 })], 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn periodic_models_repeat(fam in 0usize..5, x in -60.0f64..60.0) {
        let m = &families()[fam];
        let omega = m.period().unwrap();
        // keep away from layer interfaces, where rounding of x + ω may flip the side
        let s = (x / omega).rem_euclid(1.0);
        prop_assume!((s - 0.4).abs() > 1e-9 && s > 1e-9 && s < 1.0 - 1e-9);
        let (a, b) = (m.eval(x), m.eval(x + omega));
        prop_assert!((a.inv_p - b.inv_p).abs() <= 1e-12);
        prop_assert!((a.q - b.q).abs() <= 1e-12);
        prop_assert!((a.r - b.r).abs() <= 1e-12);
    }

    #[test]
    fn transfer_determinant_is_one(fam in 0usize..5, lambda in -5.0f64..25.0, x0 in 0.0f64..10.0, len in 0.1f64..2.0) {
        let m = &families()[fam];
        let t = transfer_matrix(m, lambda, x0, x0 + len, DEFAULT_TOL).unwrap();
        prop_assert!((t.det() - 1.0).abs() <= 1e-9, "det {}", t.det());
    }

    #[test]
    fn transfer_matrices_compose(fam in 0usize..5, lambda in -5.0f64..25.0, x0 in 0.0f64..10.0, len in 0.1f64..2.0, frac in 0.05f64..0.95) {
        let m = &families()[fam];
        let x1 = x0 + frac * len;
        let x2 = x0 + len;
        let whole = transfer_matrix(m, lambda, x0, x2, DEFAULT_TOL).unwrap().entries;
        let first = transfer_matrix(m, lambda, x0, x1, DEFAULT_TOL).unwrap().entries;
        let second = transfer_matrix(m, lambda, x1, x2, DEFAULT_TOL).unwrap().entries;
        let prod = second * first;
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((prod.0[i][j] - whole.0[i][j]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn wronskian_is_constant(lambda in -3.0f64..10.0, u0 in -1.0f64..1.0, p0 in -1.0f64..1.0, x in 0.5f64..5.0) {
        let pair = well_pair();
        let m = pair.pert();
        let s1 = StateVector::new(0.0, 1.0, 0.0);
        let s2 = StateVector::new(0.0, u0, 1.0 + p0.abs());
        let w0 = wronskian(&s1, &s2).unwrap();
        let a = propagate_state(m, lambda, s1, x, DEFAULT_TOL).unwrap();
        let b = propagate_state(m, lambda, s2, x, DEFAULT_TOL).unwrap();
        let w = wronskian(&a, &b).unwrap();
        let scale = a.as_array().iter().chain(b.as_array().iter()).fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!((w - w0).abs() <= 1e-9 * scale * scale, "{w} vs {w0}");
    }

    #[test]
    fn multipliers_and_classification(fam in 0usize..5, lambda in -5.0f64..25.0) {
        let m = &families()[fam];
        let r = floquet::monodromy(m, lambda, 1e-11).unwrap();
        let prod = r.multipliers[0] * r.multipliers[1];
        prop_assert!((prod.re - 1.0).abs() <= 1e-9 && prod.im.abs() <= 1e-9);
        // rounding of ad - bc alone is of order ‖M‖² ε
        let scale = r.m.0.iter().flatten().fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!((r.m.det() - 1.0).abs() <= 1e-9 * scale * scale);
        prop_assert!((r.m.trace() - r.d).abs() <= 1e-15);
        prop_assert!(r.c.re >= 0.0);
        match r.structure {
            Structure::Hyperbolic => prop_assert!(r.c.re > 0.0 && r.d.abs() > 2.0),
            Structure::Elliptic => prop_assert!(r.c.re <= 1e-12 && r.c.im > 0.0 && r.c.im < PI),
            _ => prop_assert!((r.d.abs() - 2.0).abs() <= floquet::DEFAULT_TOL_EDGE),
        }
    }

    #[test]
    fn sturm_count_is_monotone(l1 in -2.0f64..8.0, dl in 0.0f64..3.0) {
        let pair = well_pair();
        let p = discretize(pair.pert(), 0.0, 8.0 * PI, 800, LeftBoundary::Alpha(0.7)).unwrap();
        let (c1, c2) = (p.sturm_count(l1), p.sturm_count(l1 + dl));
        prop_assert!(c1 <= c2);
        // each eigenvalue found between them is counted exactly once
        let inside = p.eigenvalues_in(l1, l1 + dl, 1e-12).len();
        prop_assert_eq!(inside, c2 - c1);
    }

    #[test]
    fn moment_norm_nondecreasing(x1 in 0.5f64..20.0, dx in 0.0f64..20.0, k in 0u8..3) {
        let base = make_builtin("mathieu", &[1.0]).unwrap();
        let pair = PerturbedPair::new(base.clone(), vec![PerturbationTerm::q(Profile::ExpDecay { amplitude: -3.0, rate: 1.0 })], 2).unwrap();
        let a = moment_norm(&pair, k, x1).unwrap().value;
        let b = moment_norm(&pair, k, x1 + dx).unwrap().value;
        prop_assert!(a >= 0.0 && b + 1e-12 >= a);
        let flat = PerturbedPair::unperturbed(base).unwrap();
        prop_assert_eq!(moment_norm(&flat, k, x1).unwrap().value, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn band_edges_are_roots_of_discriminant(gamma in 0.3f64..2.0) {
        let m = make_builtin("mathieu", &[gamma]).unwrap();
        let b = floquet::band_structure(&m, -2.5, 6.0, &floquet::BandOptions::default()).unwrap();
        prop_assert!(!b.edges.is_empty());
        for e in &b.edges {
            let d = floquet::discriminant(&m, *e, 1e-11).unwrap();
            prop_assert!((d.abs() - 2.0).abs() <= 1e-9, "edge {e}: D = {d}");
        }
        for band in &b.bands {
            let mid = 0.5 * (band[0] + band[1]);
            prop_assert!(floquet::discriminant(&m, mid, 1e-11).unwrap().abs() < 2.0);
        }
    }

    #[test]
    fn decay_metric_shrinks_along_tail(amp in -4.0f64..4.0, rate in 0.5f64..2.0, lambda in -3.0f64..-1.0) {
        prop_assume!(amp.abs() > 0.1);
        let base = make_builtin("free", &[PI]).unwrap();
        let pair = PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::ExpDecay { amplitude: amp, rate })], 0).unwrap();
        let setup = VolterraSetup::new(&pair, lambda, &VolterraOptions::default()).unwrap();
        let u = perturb::build_decaying_solution(&setup).unwrap();
        let dev = u.deviation();
        let cells: Vec<f64> = (0..setup.grid.periods())
            .map(|n| {
                let lo = setup.grid.cell_start(n);
                let hi = if n + 1 < setup.grid.periods() { setup.grid.cell_start(n + 1) } else { dev.len() };
                dev[lo..hi].iter().cloned().fold(0.0, f64::max)
            })
            .collect();
        for w in cells.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{cells:?}");
        }
        prop_assert!(cells.last().unwrap() < &1e-6);
    }
}
