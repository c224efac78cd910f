use std::f64::consts::PI;

use hillgap_core::coefficients::{make_builtin, Coefficients, CoefficientModel, PerturbationTerm, PerturbedPair, Profile};
use hillgap_core::floquet::{band_structure, discriminant, monodromy, BandOptions, Structure};
use hillgap_core::oracle::{discretize, LeftBoundary};

/// Plain fixed-step RK4 on `u' = pu / p`, `(pu)' = (q - λ r) u` over one
/// period; returns the trace of the monodromy matrix.
fn rk4_discriminant(model: &CoefficientModel, lambda: f64, omega: f64, steps: usize) -> f64 {
    let h = omega / steps as f64;
    let f = |x: f64, y: [f64; 2]| {
        let t = model.eval(x);
        [t.inv_p * y[1], (t.q - lambda * t.r) * y[0]]
    };
    let mut trace = 0.0;
    for (k, y0) in [[1.0, 0.0], [0.0, 1.0]].into_iter().enumerate() {
        let mut y = y0;
        for i in 0..steps {
            let x = i as f64 * h;
            let k1 = f(x, y);
            let k2 = f(x + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
            let k3 = f(x + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
            let k4 = f(x + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
            for j in 0..2 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        trace += y[k];
    }
    trace
}

/// Edges from a coarse RK4 scan of `|D| - 2` refined by bisection.
fn rk4_edges(model: &CoefficientModel, lo: f64, hi: f64) -> Vec<f64> {
    let steps = 4000;
    let g = |l: f64| rk4_discriminant(model, l, PI, steps).abs() - 2.0;
    let n = ((hi - lo) / 0.005) as usize;
    let mut edges = Vec::new();
    let mut prev = (lo, g(lo));
    for i in 1..=n {
        let l = lo + (hi - lo) * i as f64 / n as f64;
        let v = g(l);
        if v.signum() != prev.1.signum() {
            let (mut a, mut b, fa) = (prev.0, l, prev.1);
            while b - a > 1e-13 {
                let m = 0.5 * (a + b);
                if g(m).signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            edges.push(0.5 * (a + b));
        }
        prev = (l, v);
    }
    edges
}

#[test]
fn free_discriminant_closed_form() {
    for omega in [1.0, PI] {
        let free = make_builtin("free", &[omega]).unwrap();
        for i in 0..200 {
            let l = -5.0 + 30.0 * i as f64 / 199.0;
            let exact = if l >= 0.0 { 2.0 * (omega * l.sqrt()).cos() } else { 2.0 * (omega * (-l).sqrt()).cosh() };
            let d = discriminant(&free, l, 1e-12).unwrap();
            assert!((d - exact).abs() <= 1e-8, "ω={omega} λ={l}: {d} vs {exact}");
        }
    }
}

#[test]
fn mathieu_edges_match_rk4_bisection() {
    let m = make_builtin("mathieu", &[1.0]).unwrap();
    let bands = band_structure(&m, -1.0, 5.0, &BandOptions::default()).unwrap();
    let reference = rk4_edges(&m, -1.0, 5.0);
    assert_eq!(bands.edges.len(), reference.len(), "{:?} vs {reference:?}", bands.edges);
    for (e, r) in bands.edges.iter().zip(reference.iter()) {
        assert!((e - r).abs() < 1e-8, "{e} vs {r}");
    }
    assert!((bands.edges[0] + 0.45514).abs() < 1e-5);
    assert!((bands.edges[1] + 0.11025).abs() < 1e-5);
    assert!((bands.edges[2] - 1.85911).abs() < 1e-5);
}

#[test]
fn double_resolution_scan_agrees() {
    let m = make_builtin("mathieu", &[1.0]).unwrap();
    let coarse = band_structure(&m, -1.0, 5.0, &BandOptions::default()).unwrap();
    let fine = band_structure(&m, -1.0, 5.0, &BandOptions { scan_resolution: 800.0, ..Default::default() }).unwrap();
    assert_eq!(coarse.edges.len(), fine.edges.len());
    for (a, b) in coarse.edges.iter().zip(fine.edges.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn const_shift_moves_free_edges() {
    let shifted = make_builtin("const_shift", &[5.0]).unwrap();
    let bands = band_structure(&shifted, 4.0, 14.0, &BandOptions::default()).unwrap();
    for (e, free) in bands.edges.iter().zip([0.0, 1.0, 1.0, 4.0, 4.0, 9.0]) {
        assert!((e - (free + 5.0)).abs() < 1e-7, "{:?}", bands.edges);
    }
}

#[test]
fn discriminant_reproduced_at_tighter_tolerance() {
    let m = make_builtin("mathieu", &[1.0]).unwrap();
    let a = discriminant(&m, 0.0, 1e-10).unwrap();
    let b = discriminant(&m, 0.0, 1e-12).unwrap();
    let c = rk4_discriminant(&m, 0.0, PI, 8000);
    assert!((a - b).abs() < 1e-9);
    assert!((b - c).abs() < 1e-9);
}

#[test]
fn lowest_dirichlet_level_approaches_first_edge() {
    let m = make_builtin("mathieu", &[1.0]).unwrap();
    let edge = band_structure(&m, -1.0, 0.0, &BandOptions::default()).unwrap().edges[0];
    let p = discretize(&m, 0.0, 40.0 * PI, 16000, LeftBoundary::Dirichlet).unwrap();
    let low = p.eigenvalues_in(-1.0, edge + 0.05, 1e-12);
    let first = low[0];
    assert!(first > edge - 1e-4, "{first} below edge {edge}");
    assert!(first - edge < 1e-3, "{first} vs {edge}");
}

#[test]
fn finite_difference_bound_state_converges_quadratically() {
    // Smooth coefficients: Gaussian well on the Mathieu base, bound state
    // below the spectrum.
    let base = make_builtin("mathieu", &[1.0]).unwrap();
    let pair = PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::Gaussian { amplitude: -3.0, width: 1.0 })], 2).unwrap();
    let l = 12.0 * PI;
    let level = |n: usize| {
        let p = discretize(pair.pert(), 0.0, l, n, LeftBoundary::Alpha(PI / 2.0)).unwrap();
        p.eigenvalues_in(-5.0, -0.45513860410705087, 1e-14)
    };
    let (e1, e2, e3) = (level(1200), level(2400), level(4800));
    assert_eq!(e1.len(), 1, "{e1:?}");
    assert_eq!(e2.len(), 1);
    assert_eq!(e3.len(), 1);
    let ratio = (e1[0] - e2[0]) / (e2[0] - e3[0]);
    assert!((ratio - 4.0).abs() < 0.2, "Richardson ratio {ratio}");
}

#[test]
fn free_monodromy_cases() {
    let free = make_builtin("free", &[PI]).unwrap();
    let m = monodromy(&free, 0.0, 1e-12).unwrap();
    assert_eq!(m.structure, Structure::ParabolicJordan);
    assert!((m.m.0[0][1] - PI).abs() < 1e-9);
    let m = monodromy(&free, 1.0, 1e-12).unwrap();
    assert_eq!(m.structure, Structure::ParabolicDiagonalizable);
    assert!((m.c.im - PI).abs() < 1e-6);
    let m = monodromy(&free, -1.0, 1e-12).unwrap();
    assert_eq!(m.structure, Structure::Hyperbolic);
    assert!((m.d - 2.0 * PI.cosh()).abs() < 1e-8);
    assert!((m.c.re - PI).abs() < 1e-9);
}
