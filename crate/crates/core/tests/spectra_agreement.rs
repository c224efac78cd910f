use std::f64::consts::PI;

use hillgap_core::coefficients::{make_builtin, FullLine, PerturbationTerm, PerturbedPair, Profile};
use hillgap_core::floquet::{band_structure, BandOptions};
use hillgap_core::oracle::{default_length, edge_window, OracleProblem};
use hillgap_core::perturb::{self, VolterraOptions, VolterraSetup};
use hillgap_core::spectra::*;

fn mathieu() -> hillgap_core::coefficients::CoefficientModel {
    make_builtin("mathieu", &[1.0]).unwrap()
}

fn edges() -> Vec<f64> {
    band_structure(&mathieu(), -1.0, 5.0, &BandOptions::default()).unwrap().edges
}

fn well(depth: f64, start: f64) -> PerturbedPair {
    PerturbedPair::new(mathieu(), vec![PerturbationTerm::q(Profile::SquareWell { depth, start, width: 2.0 })], 1).unwrap()
}

fn gaps() -> [(f64, f64); 2] {
    let e = edges();
    [(e[1], e[2]), (e[3], e[4])]
}

#[test]
fn halfline_methods_agree() {
    let opts = GapOptions::default();
    for depth in [-2.0, -5.0, -10.0] {
        let pair = well(depth, 0.0);
        for alpha in [0.0, 1.0] {
            for gap in gaps() {
                let r = gap_report_halfline(&pair, BoundaryCondition::new(alpha).unwrap(), gap, &opts, &Sequential).unwrap();
                let w = r.wronskian.as_ref().unwrap();
                assert!(r.agreement, "depth {depth} α {alpha} gap {gap:?}: {} {:?} {:?}", r.count_shooting, r.count_wronskian, r.count_oracle);
                assert!(w.certified, "cutoff not certified: γ {} {:?}", w.gamma, w.cutoff);
                for e in &r.eigenvalues {
                    assert!(*e > gap.0 && *e < gap.1);
                }
            }
        }
    }
}

#[test]
fn unperturbed_gaps_hold_at_most_one_eigenvalue() {
    let pair = PerturbedPair::unperturbed(mathieu()).unwrap();
    for gap in gaps() {
        let r = gap_report_halfline(&pair, BoundaryCondition::dirichlet(), gap, &GapOptions::default(), &Sequential).unwrap();
        assert!(r.agreement);
        assert!(r.count_shooting <= 1);
    }
}

#[test]
fn wronskian_counts_match_shooting_on_subintervals() {
    let pair = well(-10.0, 0.0);
    let bc = BoundaryCondition::new(1.0).unwrap();
    let opts = GapOptions::default();
    let vopts = VolterraOptions::default();
    for gap in gaps() {
        let shoot = gap_eigenvalues_halfline(&pair, bc, gap, &opts, &Sequential).unwrap();
        let w = gap.1 - gap.0;
        for (s, t) in [(0.05, 0.6), (0.3, 0.95), (0.1, 0.5)] {
            let (mu, la) = (gap.0 + s * w, gap.0 + t * w);
            let inside = shoot.eigenvalues.iter().filter(|e| **e > mu && **e < la).count();
            let c = wronskian_zero_count(&pair, bc, mu, la, &vopts).unwrap();
            assert_eq!(c.count, inside, "({mu}, {la}): {c:?}");
        }
    }
}

#[test]
fn boundary_condition_changes_counts_by_at_most_one() {
    let pair = well(-5.0, 0.0);
    let opts = GapOptions::default();
    for gap in gaps() {
        let counts: Vec<usize> = [0.0, 0.6, 1.2, 1.8, 2.4]
            .iter()
            .map(|a| gap_eigenvalues_halfline(&pair, BoundaryCondition::new(*a).unwrap(), gap, &opts, &Sequential).unwrap().count_shooting)
            .collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{gap:?}: {counts:?}");
    }
}

#[test]
fn fullline_methods_agree_and_coupling_bound_holds() {
    let opts = GapOptions::default();
    for depth in [-2.0, -5.0, -10.0] {
        let line = FullLine::from_pair(&well(depth, -1.0)).unwrap();
        for gap in gaps() {
            let r = gap_eigenvalues_fullline(&line, gap, &opts, &Sequential).unwrap();
            assert!(r.report.agreement, "depth {depth} gap {gap:?}: {:?}", (r.report.count_shooting, r.report.count_wronskian, r.report.count_oracle));
            assert!(r.coupling_bound_holds);
        }
    }
}

#[test]
fn eigenfunctions_decay_at_the_gap_rate() {
    let pair = well(-5.0, 0.0);
    let r = gap_eigenvalues_halfline(&pair, BoundaryCondition::dirichlet(), gaps()[0], &GapOptions::default(), &Sequential).unwrap();
    assert!(!r.eigenvalues.is_empty());
    for e in &r.eigenvalues {
        let setup = VolterraSetup::new(&pair, *e, &VolterraOptions::default()).unwrap();
        let u = perturb::build_decaying_solution(&setup).unwrap();
        let rate = setup.floquet.c.re / pair.period();
        let envelope = setup.e_const * (setup.e_const * setup.b_integral).exp();
        let y0 = u.states[0][0].norm().hypot(u.states[0][1].norm());
        for (x, s) in u.xs.iter().zip(u.states.iter()) {
            let n = s[0].norm().hypot(s[1].norm());
            assert!(n * (rate * x).exp() <= envelope * y0.max(u.norm()) * (1.0 + 1e-9), "x {x}");
        }
    }
}

#[test]
fn green_operator_residual_on_well() {
    let pair = well(-2.0, 0.0);
    let g = |x: f64| if x > 0.0 && x < 3.0 { (PI * x / 3.0).sin().powi(6) } else { 0.0 };
    for lambda in [0.5, 1.2, 4.1] {
        for bc in [None, Some(BoundaryCondition::new(0.4).unwrap())] {
            let r = greens_apply(&pair, lambda, g, bc, &VolterraOptions::default()).unwrap();
            assert!(r.residual_sup < 1e-6, "λ={lambda}: {}", r.residual_sup);
        }
    }
}

#[test]
fn gaussian_edges_carry_no_eigenvalue() {
    let pair = PerturbedPair::new(mathieu(), vec![PerturbationTerm::q(Profile::Gaussian { amplitude: 1.0, width: 1.0 })], 2).unwrap();
    let line = FullLine::from_pair(&pair).unwrap();
    let l = default_length(PI, 12);
    for e in &edges()[..4] {
        let v = edge_eigenvalue_test(&pair, *e, 20, &VolterraOptions::default()).unwrap();
        assert_eq!(v.verdict.as_str(), "no_L2_solution", "{e}: {v:?}");
        assert!(v.n0.unwrap() <= 10);
        let w = edge_window(OracleProblem::FullLine(&line), *e, 1e-4, l, 12 * 256).unwrap();
        assert!(w.stable.is_empty(), "{w:?}");
    }
}

#[test]
fn moment_class_one_edge_may_be_inconclusive() {
    let v = edge_eigenvalue_test(&well(-2.0, 0.0), edges()[1], 20, &VolterraOptions::default()).unwrap();
    assert_eq!(v.verdict.as_str(), "inconclusive");
}

#[test]
fn interior_solutions_are_not_subordinate() {
    let pair = PerturbedPair::new(mathieu(), vec![PerturbationTerm::q(Profile::ExpDecay { amplitude: -3.0, rate: 1.0 })], 0).unwrap();
    let xs: Vec<f64> = (1..=30).map(|k| k as f64 * PI).collect();
    for lambda in [-0.3, 2.5, 3.5, 4.6] {
        let s = subordinacy_diagnostic(&pair, lambda, &xs, &VolterraOptions::default()).unwrap();
        for r in &s.ratios {
            assert!(*r > 0.05 && *r < 20.0, "λ={lambda}: {:?}", s.ratios);
        }
        assert!(s.bounds_from.unwrap() <= 10, "λ={lambda}: {:?}", s.bounds_from);
    }
    let gap = subordinacy_diagnostic(&pair, 0.5, &xs, &VolterraOptions::default());
    assert!(gap.is_err());
}
