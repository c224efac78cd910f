use std::f64::consts::PI;

use hillgap_core::coefficients::{make_builtin, PerturbationTerm, PerturbedPair, Profile};
use hillgap_core::perturb::{self, VolterraOptions, VolterraSetup};
use hillgap_core::quadode::{propagate_state, StateVector};

fn exp_pair(base: &str, params: &[f64], amplitude: f64) -> PerturbedPair {
    let base = make_builtin(base, params).unwrap();
    PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::ExpDecay { amplitude, rate: 1.0 })], 0).unwrap()
}

// -u'' - e^{-x} u = -u has the decaying solution J₂(2e^{-x/2}).
#[test]
fn free_exponential_well_matches_bessel() {
    let pair = exp_pair("free", &[PI], -1.0);
    let setup = VolterraSetup::new(&pair, -1.0, &VolterraOptions::default()).unwrap();
    let u = perturb::build_decaying_solution(&setup).unwrap();
    let bessel = |x: f64| {
        let z = 2.0 * (-x / 2.0).exp();
        let j2 = libm::jn(2, z);
        let dj2 = libm::j1(z) - 2.0 * j2 / z;
        [j2, -dj2 * (-x / 2.0).exp()]
    };
    let y0 = u.initial();
    let b0 = bessel(0.0);
    let scale = y0[0].re / b0[0];
    for (x, s) in u.xs.iter().zip(u.states.iter()).step_by(97) {
        let b = bessel(*x);
        let tol = 1e-8 * (-x).exp().max(1e-300) * 10.0;
        assert!((s[0].re - scale * b[0]).abs() <= tol, "u at {x}: {} vs {}", s[0].re, scale * b[0]);
        assert!((s[1].re - scale * b[1]).abs() <= tol, "pu at {x}");
    }
}

#[test]
fn decaying_solution_survives_backward_propagation() {
    for (base, params, lambda) in [("mathieu", vec![1.0], 0.5), ("mathieu", vec![1.0], 4.1), ("free", vec![PI], -2.0)] {
        let pair = exp_pair(base, &params, -2.0);
        let setup = VolterraSetup::new(&pair, lambda, &VolterraOptions::default()).unwrap();
        let u = perturb::build_decaying_solution(&setup).unwrap();
        let i = u.xs.len() / 3;
        let s = u.states[i];
        let back = propagate_state(pair.pert(), lambda, StateVector::new(u.xs[i], s[0].re, s[1].re), pair.a(), 1e-12).unwrap();
        let y0 = u.initial();
        let scale = y0[0].norm().max(y0[1].norm());
        assert!((back.u - y0[0].re).abs() <= 1e-7 * scale, "{base} λ={lambda}: {} vs {}", back.u, y0[0].re);
        assert!((back.pu - y0[1].re).abs() <= 1e-7 * scale, "{base} λ={lambda}");
    }
}

#[test]
fn volterra_machinery_on_exponential_families() {
    for (base, params, lambda) in [("free", vec![PI], -1.0), ("mathieu", vec![1.0], 0.5), ("mathieu", vec![1.0], -1.0)] {
        let pair = exp_pair(base, &params, -3.0);
        let setup = VolterraSetup::new(&pair, lambda, &VolterraOptions::default()).unwrap();
        let u = perturb::build_decaying_solution(&setup).unwrap();
        let neumann = perturb::neumann_terms(&setup, 6).unwrap();
        assert!(neumann.ratio_test, "{base} λ={lambda}: {:?} bound {}", neumann.ratios, neumann.bound);
        assert!(neumann.factorial_test);
        let res = perturb::residual_report(&setup, &u);
        assert!(res.residual_sup < 1e-7, "{base} λ={lambda}: residual {}", res.residual_sup);
        let pixel = perturb::pixel_report(&setup, &u);
        assert!(pixel.pixel_tail.unwrap() < 1e-6, "{base} λ={lambda}: {pixel:?}");
        let g = perturb::gronwall_envelope(&setup, &u);
        assert!(g.holds, "{g:?}");
    }
}

#[test]
fn second_solution_is_independent_in_gap_and_band() {
    for (lambda, k) in [(0.5, 0u8), (2.5, 0), (1.85910807251581, 2)] {
        let base = make_builtin("mathieu", &[1.0]).unwrap();
        let pair = PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::Gaussian { amplitude: 1.0, width: 1.0 })], k).unwrap();
        let setup = VolterraSetup::new(&pair, lambda, &VolterraOptions::default()).unwrap();
        let (u, v) = perturb::build_solution_pair(&setup).unwrap();
        let w = perturb::wronskian_trace(&u, &v);
        assert!(w[0].norm() > perturb::INDEPENDENCE_THRESHOLD);
        for x in &w {
            assert!((x - w[0]).norm() <= 1e-6 * w[0].norm(), "λ={lambda}: {x} vs {}", w[0]);
        }
    }
}
