//! Pass/fail checks behind `hillgap verify` and the acceptance test.
//!
//! Each check returns a [`Check`] instead of panicking so a suite always
//! prints its full table.

use std::f64::consts::PI;

use hillgap_core::coefficients::{make_builtin, Coefficients, CoefficientModel, PerturbedPair};
use hillgap_core::floquet::{band_structure, discriminant, BandOptions, BandStructure};
use hillgap_core::oracle::{binned_counts, default_length, discretize, edge_window, LeftBoundary, OracleProblem};
use hillgap_core::perturb::{self, VolterraOptions, VolterraSetup};
use hillgap_core::quadode::{transfer_matrix, DEFAULT_TOL};
use hillgap_core::spectra::{
    edge_eigenvalue_test, gap_eigenvalues_fullline, gap_report_halfline, greens_apply, subordinacy_diagnostic,
    wronskian_zero_count, BoundaryCondition, GapOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::Parallel;
use crate::problem::ProblemSpec;
use crate::Result;

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(criterion: u8, name: &str, passed: bool, detail: String) -> Self {
        Check { criterion, name: name.to_string(), passed, detail }
    }

    fn failed(criterion: u8, name: &str, err: impl std::fmt::Display) -> Self {
        Check::new(criterion, name, false, format!("error: {err}"))
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("[{tag}] {}. {}: {}", self.criterion, self.name, self.detail)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn table(&self) -> String {
        let mut s = format!("suite {} (seed {})\n", self.suite, self.seed);
        for c in &self.checks {
            s.push_str(&c.line());
            s.push('\n');
        }
        let n = self.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!("{n}/{} passed\n", self.checks.len()));
        s
    }
}

/// Inputs shared by the checks. `problem` overrides the family a suite
/// exercises; `range` is where its gaps and edges are looked for.
pub struct Verifier {
    pub exec: Parallel,
    pub seed: u64,
    pub problem: Option<ProblemSpec>,
    pub range: Option<(f64, f64)>,
}

fn run(criterion: u8, name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((ok, detail)) => Check::new(criterion, name, ok, detail),
        Err(e) => Check::failed(criterion, name, e),
    }
}

fn mathieu() -> CoefficientModel {
    make_builtin("mathieu", &[1.0]).expect("built-in family")
}

impl Verifier {
    pub fn new(exec: Parallel, seed: u64) -> Self {
        Verifier { exec, seed, problem: None, range: None }
    }

    pub fn suite(&self, name: &str) -> Result<SuiteReport> {
        let checks = match name {
            "thm1" => vec![self.band_edges(), self.density_of_states(), self.volterra(), self.green()],
            "thm2" => vec![self.gap_counts(), self.coupling()],
            "thm3" => vec![self.edges()],
            "all" => self.all(),
            other => return Err(crate::AppError::Usage(format!("unknown suite `{other}` (expected thm1, thm2 or thm3)"))),
        };
        let passed = checks.iter().all(|c| c.passed);
        Ok(SuiteReport { suite: name.to_string(), seed: self.seed, passed, checks })
    }

    pub fn all(&self) -> Vec<Check> {
        vec![
            self.free_closed_form(),
            self.transfer_invariants(),
            self.band_edges(),
            self.density_of_states(),
            self.gap_counts(),
            self.edges(),
            self.volterra(),
            self.green(),
            self.coupling(),
        ]
    }

    fn spec_or(&self, default: &str) -> Result<ProblemSpec> {
        let mut spec = match &self.problem {
            Some(p) => p.clone(),
            None => ProblemSpec::from_family(default)?,
        };
        if spec.perturbations.is_empty() {
            let fallback = ProblemSpec::from_family(default)?;
            spec.perturbations = fallback.perturbations;
        }
        Ok(spec)
    }

    fn bands_of(&self, base: &CoefficientModel) -> Result<BandStructure> {
        let (lo, hi) = self.range.unwrap_or(if matches!(base.base_family(), hillgap_core::coefficients::BaseFamily::Mathieu { .. }) {
            (-1.0, 5.0)
        } else {
            (-2.0, 20.0)
        });
        Ok(band_structure(base, lo, hi, &BandOptions::default())?)
    }

    /// 1. Free discriminant against `2cos(ω√λ)` and `2cosh(ω√-λ)`.
    pub fn free_closed_form(&self) -> Check {
        run(1, "free discriminant closed form", || {
            let mut worst: f64 = 0.0;
            for omega in [1.0, PI] {
                let free = make_builtin("free", &[omega])?;
                for i in 0..200 {
                    let l = -5.0 + 30.0 * i as f64 / 199.0;
                    let exact = if l >= 0.0 { 2.0 * (omega * l.sqrt()).cos() } else { 2.0 * (omega * (-l).sqrt()).cosh() };
                    worst = worst.max((discriminant(&free, l, 1e-12)? - exact).abs());
                }
            }
            Ok((worst <= 1e-8, format!("max |D - exact| = {worst:.2e} over 400 samples (tol 1e-8)")))
        })
    }

    /// 2. det T = 1 and T(x₂,x₀) = T(x₂,x₁) T(x₁,x₀) on random cases.
    pub fn transfer_invariants(&self) -> Check {
        run(2, "transfer matrix invariants", || {
            let families = [
                make_builtin("free", &[PI])?,
                make_builtin("free", &[1.0])?,
                make_builtin("const_shift", &[2.0])?,
                mathieu(),
                make_builtin("layered", &[2.0, 0.4, 1.0, 0.5, 0.0, 3.0, 1.0, 2.0])?,
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let (mut det_err, mut comp_err): (f64, f64) = (0.0, 0.0);
            for _ in 0..100 {
                let m = &families[rng.gen_range(0..families.len())];
                let lambda = rng.gen_range(-5.0..25.0);
                let x0 = rng.gen_range(0.0..10.0);
                let len = rng.gen_range(0.1..2.0);
                let x1 = x0 + rng.gen_range(0.05..0.95) * len;
                let x2 = x0 + len;
                let whole = transfer_matrix(m, lambda, x0, x2, DEFAULT_TOL)?;
                let first = transfer_matrix(m, lambda, x0, x1, DEFAULT_TOL)?;
                let second = transfer_matrix(m, lambda, x1, x2, DEFAULT_TOL)?;
                det_err = det_err.max((whole.det() - 1.0).abs());
                let prod = second.entries * first.entries;
                for i in 0..2 {
                    for j in 0..2 {
                        comp_err = comp_err.max((prod.0[i][j] - whole.entries.0[i][j]).abs());
                    }
                }
            }
            Ok((
                det_err <= 1e-9 && comp_err <= 1e-8,
                format!("100 cases: max |det - 1| = {det_err:.2e} (tol 1e-9), max composition error = {comp_err:.2e} (tol 1e-8)"),
            ))
        })
    }

    /// 3. Mathieu edges against RK4 bisection and the lowest Dirichlet level.
    pub fn band_edges(&self) -> Check {
        run(3, "Mathieu band edges", || {
            let m = mathieu();
            let bands = band_structure(&m, -1.0, 5.0, &BandOptions::default())?;
            let reference = rk4_edges(&m, -1.0, 5.0);
            if bands.edges.len() != reference.len() {
                return Ok((false, format!("{} edges vs {} from the RK4 oracle", bands.edges.len(), reference.len())));
            }
            let worst = bands.edges.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let p = discretize(&m, 0.0, 40.0 * PI, 16000, LeftBoundary::Dirichlet)?;
            let low = p.eigenvalues_in(-1.0, bands.edges[0] + 0.05, 1e-12);
            let first = low.first().copied().unwrap_or(f64::NAN);
            let gap = first - bands.edges[0];
            let ok = worst <= 1e-8 && gap > -1e-4 && gap < 1e-3;
            Ok((ok, format!("{} edges, max deviation {worst:.2e} (tol 1e-8); lowest FD level - first edge = {gap:.2e} (tol 1e-3)", reference.len())))
        })
    }

    /// 4. Counting-function density on bands and gaps; cell bounds inside bands.
    pub fn density_of_states(&self) -> Check {
        run(4, "density gaps and interior cell bounds", || {
            let mut spec = self.spec_or("mathieu+exp_decay")?;
            spec.moment_class = Some(0);
            let pair = spec.pair()?;
            let line = spec.full()?;
            let bands = self.bands_of(pair.base())?;
            let omega = pair.period();
            let (lo, hi) = bands.range;
            // the discrete bands are shifted by O(h²); leave a window
            // around every edge unclassified
            let delta = 5e-3;
            let mut bins = vec![lo];
            for e in bands.edges.iter().filter(|e| **e - delta > lo && **e + delta < hi) {
                bins.extend([e - delta, e + delta]);
            }
            bins.push(hi);
            let periods = 40;
            let counts = binned_counts(OracleProblem::FullLine(&line), &bins, default_length(omega, periods), periods * 128)?;
            let mut ok = true;
            let mut parts = Vec::new();
            for (i, w) in bins.windows(2).enumerate() {
                let mid = 0.5 * (w[0] + w[1]);
                if bands.edges.iter().any(|e| (e - mid).abs() < 1e-12 * (1.0 + e.abs()) + 1e-9) {
                    continue;
                }
                let (s, l) = (counts.small[i], counts.large[i]);
                let in_band = bands.in_band(mid);
                let good = if in_band { s >= 4 && l as f64 >= 1.5 * s as f64 } else { l <= s + 2 };
                ok &= good;
                parts.push(format!("{}[{:.3},{:.3}] {s}->{l}", if in_band { "band" } else { "gap" }, w[0], w[1]));
            }
            // interior points: every cell of two independent solutions inside [E1, E2]
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let xs: Vec<f64> = (1..=30).map(|k| pair.a() + k as f64 * omega).collect();
            let mut interior = Vec::new();
            for b in &bands.bands {
                let (b0, b1) = (b[0].max(lo), b[1].min(hi));
                if b1 - b0 > 1e-3 {
                    interior.push(b0 + (b1 - b0) * rng.gen_range(0.1..0.9));
                }
            }
            let mut worst_from = 0;
            for l in &interior {
                let s = subordinacy_diagnostic(&pair, *l, &xs, &VolterraOptions::default())?;
                match s.bounds_from {
                    Some(n) if xs.len() - n >= 20 => worst_from = worst_from.max(n),
                    _ => {
                        ok = false;
                        worst_from = usize::MAX;
                    }
                }
            }
            let from = if worst_from == usize::MAX { "never".to_string() } else { worst_from.to_string() };
            Ok((ok, format!("{}; {} interior λ in [E1,E2] from period {from} of 30", parts.join(", "), interior.len())))
        })
    }

    /// 5. Shooting, Wronskian and oracle counts for several well strengths.
    pub fn gap_counts(&self) -> Check {
        run(5, "gap eigenvalue counts agree", || {
            let spec = self.spec_or("mathieu+well")?;
            let base = spec.base_model()?;
            let gaps: Vec<(f64, f64)> = self.bands_of(&base)?.gaps().into_iter().take(2).collect();
            if gaps.len() < 2 {
                return Ok((false, format!("only {} open gap(s) in range", gaps.len())));
            }
            let opts = GapOptions::default();
            let bc = BoundaryCondition::dirichlet();
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut ok = true;
            let mut parts = Vec::new();
            for s in [1.0, 2.5, 5.0] {
                let mut scaled = spec.scaled(s);
                scaled.moment_class = Some(1);
                let pair = scaled.pair()?;
                for (g, gap) in gaps.iter().enumerate() {
                    let r = gap_report_halfline(&pair, bc, *gap, &opts, &self.exec)?;
                    let certified = r.wronskian.as_ref().is_some_and(|w| w.certified);
                    ok &= r.agreement && certified;
                    parts.push(format!(
                        "x{s} gap{}: {}/{}/{}{}",
                        g + 1,
                        r.count_shooting,
                        r.count_wronskian.map_or("-".into(), |c| c.to_string()),
                        r.count_oracle.map_or("-".into(), |c| c.to_string()),
                        if certified { "" } else { " uncertified" }
                    ));
                    // random sub-interval: zero count against shooting
                    let w = r.interval.1 - r.interval.0;
                    let (t0, t1) = (rng.gen_range(0.0..0.5), rng.gen_range(0.5..1.0));
                    let (mu, la) = (r.interval.0 + t0 * w, r.interval.0 + t1 * w);
                    if r.eigenvalues.iter().all(|e| (e - mu).abs() > 1e-6 && (e - la).abs() > 1e-6) {
                        let inside = r.eigenvalues.iter().filter(|e| **e > mu && **e < la).count();
                        let c = wronskian_zero_count(&pair, bc, mu, la, &opts.volterra)?;
                        if c.count != inside {
                            ok = false;
                            parts.push(format!("sub-interval ({mu:.4},{la:.4}) {} vs {inside}", c.count));
                        }
                    }
                }
            }
            Ok((ok, format!("{} shooting/wronskian/oracle: {}", spec.label(), parts.join(", "))))
        })
    }

    /// 6. No eigenvalue at the first four edges of a k = 2 family.
    pub fn edges(&self) -> Check {
        run(6, "no eigenvalue at band edges", || {
            let mut spec = self.spec_or("mathieu+gaussian")?;
            spec.moment_class = Some(2);
            let pair = spec.pair()?;
            let line = spec.full()?;
            let bands = self.bands_of(pair.base())?;
            if bands.edges.len() < 4 {
                return Ok((false, format!("only {} edges in range", bands.edges.len())));
            }
            let l = default_length(pair.period(), 12);
            let mut ok = true;
            let mut parts = Vec::new();
            for e in &bands.edges[..4] {
                let v = edge_eigenvalue_test(&pair, *e, 20, &VolterraOptions::default())?;
                let w = edge_window(OracleProblem::FullLine(&line), *e, 1e-4, l, 12 * 256)?;
                let good = v.verdict.as_str() == "no_L2_solution" && v.n0.is_some_and(|n| n <= 10) && w.stable.is_empty();
                ok &= good;
                parts.push(format!(
                    "{e:.5}: {} n0={} stable={}",
                    v.verdict.as_str(),
                    v.n0.map_or("-".into(), |n| n.to_string()),
                    w.stable.len()
                ));
            }
            Ok((ok, format!("{}: {}", spec.label(), parts.join(", "))))
        })
    }

    /// 7. Neumann decay, residual and tail deviation on exponential families.
    pub fn volterra(&self) -> Check {
        run(7, "Volterra machinery", || {
            let mut ok = true;
            let mut parts = Vec::new();
            for (base, params, lambda) in [("free", vec![PI], -1.0), ("mathieu", vec![1.0], 0.5), ("mathieu", vec![1.0], -1.0)] {
                let mut spec = ProblemSpec::from_family(&format!("{base}+exp_decay"))?;
                spec.params = params;
                spec.moment_class = Some(0);
                let pair = spec.pair()?;
                let setup = VolterraSetup::new(&pair, lambda, &VolterraOptions::default())?;
                let u = perturb::build_decaying_solution(&setup)?;
                let neumann = perturb::neumann_terms(&setup, 6)?;
                let res = perturb::residual_report(&setup, &u);
                let pixel = perturb::pixel_report(&setup, &u).pixel_tail.unwrap_or(f64::INFINITY);
                ok &= neumann.ratio_test && res.residual_sup < 1e-7 && pixel < 1e-6;
                parts.push(format!(
                    "{base} λ={lambda}: ratio {} residual {:.1e} pixel {:.1e}",
                    if neumann.ratio_test { "ok" } else { "fails" },
                    res.residual_sup,
                    pixel
                ));
            }
            Ok((ok, parts.join(", ")))
        })
    }

    /// 8. Green's operator: closed form on the free problem, residual on wells.
    pub fn green(&self) -> Check {
        run(8, "Green's operator", || {
            let free = PerturbedPair::unperturbed(make_builtin("free", &[PI])?)?;
            let bc = BoundaryCondition::new(0.75 * PI)?;
            let r = greens_apply(&free, -1.0, |x| (-2.0 * x).exp(), Some(bc), &VolterraOptions::default())?;
            let analytic = r
                .xs
                .iter()
                .zip(&r.values)
                .map(|(x, v)| (v - ((-x).exp() / 2.0 - (-2.0 * x).exp() / 3.0)).abs())
                .fold(0.0, f64::max);
            let spec = self.spec_or("mathieu+well")?;
            let pair = spec.pair()?;
            let gaps = self.bands_of(pair.base())?.gaps();
            let a = pair.a();
            let g = move |x: f64| if x > a && x < a + 3.0 { (PI * (x - a) / 3.0).sin().powi(6) } else { 0.0 };
            let mut residual: f64 = 0.0;
            for gap in gaps.iter().take(2) {
                for t in [0.3, 0.7] {
                    let lambda = gap.0 + t * (gap.1 - gap.0);
                    for bc in [None, Some(BoundaryCondition::new(0.4)?)] {
                        residual = residual.max(greens_apply(&pair, lambda, g, bc, &VolterraOptions::default())?.residual_sup);
                    }
                }
            }
            Ok((
                analytic <= 1e-8 && residual < 1e-6,
                format!("free closed form max error {analytic:.2e} (tol 1e-8); perturbed residual {residual:.2e} (tol 1e-6)"),
            ))
        })
    }

    /// 9. |full - left - right| ≤ 2 for every shipped full-line family.
    pub fn coupling(&self) -> Check {
        run(9, "full-line coupling bound", || {
            let base = mathieu();
            let gaps: Vec<(f64, f64)> = self.bands_of(&base)?.gaps().into_iter().take(2).collect();
            let mut families = vec![ProblemSpec::from_family("mathieu")?];
            for depth in [-2.0, -5.0, -10.0] {
                let mut s = ProblemSpec::from_family("mathieu")?;
                s.push_pert("well", Some(vec![depth, 2.0, -1.0]))?;
                families.push(s);
            }
            for p in ["exp_decay", "gaussian", "power_decay"] {
                families.push(ProblemSpec::from_family(&format!("mathieu+{p}"))?);
            }
            if let Some(p) = &self.problem {
                families.push(p.clone());
            }
            let opts = GapOptions::default();
            let mut ok = true;
            let mut bad = Vec::new();
            let mut total = 0;
            for spec in &families {
                let line = spec.full()?;
                for gap in &gaps {
                    let r = gap_eigenvalues_fullline(&line, *gap, &opts, &self.exec)?;
                    total += 1;
                    if !r.coupling_bound_holds {
                        ok = false;
                        bad.push(format!("{} {:?}: {} vs {}+{}", spec.label(), gap, r.report.count_shooting, r.count_left, r.count_right));
                    }
                }
            }
            let detail = if bad.is_empty() {
                format!("{} families x {} gaps = {total} cases hold", families.len(), gaps.len())
            } else {
                format!("violations: {}", bad.join("; "))
            };
            Ok((ok, detail))
        })
    }
}

/// Fixed-step RK4 discriminant over one period, independent of the
/// adaptive propagator.
pub fn rk4_discriminant(model: &CoefficientModel, lambda: f64, omega: f64, steps: usize) -> f64 {
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

/// Roots of `|D| - 2` from an RK4 scan refined by bisection.
pub fn rk4_edges(model: &CoefficientModel, lo: f64, hi: f64) -> Vec<f64> {
    let omega = model.period().unwrap_or(PI);
    let g = |l: f64| rk4_discriminant(model, l, omega, 4000).abs() - 2.0;
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
