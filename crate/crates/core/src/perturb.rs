//! Solutions of the perturbed equation with prescribed asymptotics.
//!
//! With `Φ = [U₀ V₀]` the Floquet fundamental system of the base problem and
//! `B = [[0, Δ(1/p)], [Δq - λΔr, 0]]` the coupling, the Volterra operator
//!
//! ```text
//! (Tξ)(x) = -Φ(x) ∫_x^X Φ(t)^{-1} B(t) ξ(t) dt
//! ```
//!
//! maps solutions of the base system to solutions of the perturbed system
//! through the fixed point `ξ = φ + Tξ`. Truncating at `X` is equivalent to
//! imposing `ξ(X) = φ(X)`; the neglected tail is bounded analytically.
//!
//! The fixed point is computed window by window from the right, each window
//! short enough that the Neumann series contracts, with the contribution of
//! the windows already solved carried as a constant.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::coefficients::{Coefficients, PerturbedPair, Tail};
use crate::error::{Error, Result};
use crate::floquet::{self, FloquetSolutionPair, PeriodSamples, Structure};
use crate::grid::{Grid, Side};
use crate::linalg::{cnorm, creal, CState};
use crate::math::{abs, exp};
use crate::quadode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolterraOptions {
    /// Integrator tolerance for the base solutions.
    pub tol: f64,
    /// Uniform grid nodes per period.
    pub per_period: usize,
    /// `X` is chosen so that the coupling tail is below `0.01 · tail_tol`.
    pub tail_tol: f64,
    pub min_periods: usize,
    pub max_periods: usize,
    /// Fixed truncation point instead of the automatic choice.
    pub truncation: Option<f64>,
    /// Relative weighted sup-norm change that stops the iteration.
    pub iter_tol: f64,
    /// Iteration budget per window.
    pub max_iter: usize,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        VolterraOptions {
            tol: 1e-11,
            per_period: 400,
            tail_tol: 1e-8,
            min_periods: 2,
            max_periods: 200,
            truncation: None,
            iter_tol: 1e-10,
            max_iter: 50,
        }
    }
}

/// Everything the Volterra operator needs at one `λ`, sampled on a grid.
#[derive(Clone, Debug)]
pub struct VolterraSetup {
    pub pair: PerturbedPair,
    pub lambda: f64,
    pub floquet: FloquetSolutionPair,
    pub grid: Grid,
    pub samples: PeriodSamples,
    pub truncation: f64,
    /// Bound on `∫_X^∞ K ‖B‖`, `K` the kernel weight.
    pub tail_bound: Option<f64>,
    /// The tail bound meets the `0.01 · tail_tol` budget.
    pub tail_within_budget: bool,
    /// Kernel constant: `‖Φ(x)Φ(t)^{-1}‖ ≤ E K(t) e^{Re c (t-x)/ω}` for `t ≥ x`.
    pub e_const: f64,
    /// `∫_a^X K ‖B‖`.
    pub b_integral: f64,
    pub u0: Vec<CState>,
    pub v0: Vec<CState>,
    pub options: VolterraOptions,
    b12: Vec<f64>,
    b21: Vec<f64>,
    bnorm: Vec<f64>,
    kernel: Vec<f64>,
    /// `e^{Re c (x-a)/ω}` at every node.
    weight: Vec<f64>,
}

fn choose_truncation(pair: &PerturbedPair, lambda: f64, jordan: bool, opts: &VolterraOptions) -> Result<(f64, Option<f64>, bool)> {
    let a = pair.a();
    let omega = pair.period();
    let scale = 1f64.max(abs(lambda));
    // ∫_X^∞ K‖B‖ with K ≤ 1 + (|a| + |t|)/ω in the Jordan case.
    let tail = |x: f64| -> Tail {
        let t0 = pair.tail(0, x);
        if !jordan {
            return match t0 {
                Tail::Bound(b) => Tail::Bound(scale * b),
                other => other,
            };
        }
        match (t0, pair.tail(1, x)) {
            (Tail::Bound(b0), Tail::Bound(b1)) => Tail::Bound(scale * ((1.0 + abs(a) / omega) * b0 + b1 / omega)),
            (Tail::Divergent, _) | (_, Tail::Divergent) => Tail::Divergent,
            _ => Tail::Unknown,
        }
    };
    let round_up = |x: f64| {
        let p = libm::ceil((x - a) / omega - 1e-9).max(1.0);
        a + p * omega
    };
    let budget = 0.01 * opts.tail_tol;
    if let Some(x) = opts.truncation {
        if !(x > a) {
            return Err(Error::InvalidParameter(format!("truncation {x} must exceed a = {a}")));
        }
        let x = round_up(x);
        let t = tail(x);
        if t == Tail::Divergent {
            return Err(Error::MomentDivergent { order: if jordan { 1 } else { 0 } });
        }
        return Ok((x, t.bound(), t.bound().is_some_and(|b| b <= budget)));
    }
    let mut x_min = a + opts.min_periods.max(1) as f64 * omega;
    if let Some(e) = pair.compact_support_end() {
        x_min = x_min.max(round_up(e));
    }
    let first = libm::ceil((x_min - a) / omega - 1e-9) as usize;
    let last = opts.max_periods.max(first);
    for p in first..=last {
        let x = a + p as f64 * omega;
        // The budget must already hold one period before X, so that the
        // last period, where the decay metric is read, carries no coupling
        // above the tail tolerance.
        match tail(x - omega) {
            Tail::Divergent => return Err(Error::MomentDivergent { order: if jordan { 1 } else { 0 } }),
            Tail::Unknown => {
                let x = a + opts.max_periods.min(40).max(first) as f64 * omega;
                return Ok((x, None, false));
            }
            Tail::Bound(b) if b <= budget || p == last => {
                let t = tail(x).bound().unwrap_or(b);
                return Ok((x, Some(t), b <= budget));
            }
            _ => {}
        }
    }
    unreachable!("loop returns on its last iteration")
}

impl VolterraSetup {
    pub fn new(pair: &PerturbedPair, lambda: f64, opts: &VolterraOptions) -> Result<VolterraSetup> {
        let base = pair.base();
        let floquet = floquet::floquet_solutions(base, lambda, opts.tol)?;
        let jordan = floquet.jordan;
        let (truncation, tail_bound, tail_within_budget) = choose_truncation(pair, lambda, jordan, opts)?;
        let a = pair.a();
        let omega = pair.period();
        let periods = libm::round((truncation - a) / omega) as usize;
        let grid = Grid::new(a, omega, opts.per_period, periods, &pair.breakpoints(a, truncation));
        let samples = floquet::sample_period(base, lambda, grid.residues(), opts.tol)?;
        let u0 = floquet.states_on_grid(&grid, &samples, &floquet.u0);
        let v0 = floquet.states_on_grid(&grid, &samples, &floquet.v0);

        let kappa = floquet.c.re / omega;
        let n = grid.len();
        let mut b12 = Vec::with_capacity(n);
        let mut b21 = Vec::with_capacity(n);
        let mut bnorm = Vec::with_capacity(n);
        let mut kernel = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        for (i, node) in grid.nodes().iter().enumerate() {
            let d = pair.difference(grid.eval_point(i));
            let p = d.inv_p;
            let w = d.q - lambda * d.r;
            b12.push(p);
            b21.push(w);
            bnorm.push(abs(p).max(abs(w)));
            kernel.push(if jordan { 1.0 + (node.x - a) / omega } else { 1.0 });
            weight.push(exp(kappa * (node.x - a)));
        }

        // Sup of the periodic parts over the first period.
        let mut sup_u: f64 = 0.0;
        let mut sup_v: f64 = 0.0;
        for set in [&floquet.samples, &samples] {
            for (s, phi) in set.residues.iter().zip(set.phi.iter()) {
                let w = exp(kappa * s);
                sup_u = sup_u.max(cnorm(&phi.apply_c(floquet.u0)) * w);
                if !jordan {
                    sup_v = sup_v.max(cnorm(&phi.apply_c(floquet.v0)) / w);
                }
            }
        }
        let wabs = floquet.wronskian.norm();
        let e_const = if jordan {
            2.0 * sup_u * floquet.growth_constant.unwrap_or(0.0) / wabs
        } else {
            2.0 * sup_u * sup_v / wabs
        };
        let kb: Vec<f64> = bnorm.iter().zip(kernel.iter()).map(|(b, k)| b * k).collect();
        let b_integral = grid.integrate(&kb);
        Ok(VolterraSetup {
            pair: pair.clone(),
            lambda,
            floquet,
            grid,
            samples,
            truncation,
            tail_bound,
            tail_within_budget,
            e_const,
            b_integral,
            u0,
            v0,
            options: *opts,
            b12,
            b21,
            bnorm,
            kernel,
            weight,
        })
    }

    pub fn is_jordan(&self) -> bool {
        self.floquet.jordan
    }

    pub fn structure(&self) -> Structure {
        self.floquet.structure()
    }

    /// `E ∫_a^∞ K ‖B‖`, the Neumann bound; uses the tail bound when known.
    pub fn neumann_bound(&self) -> f64 {
        self.e_const * (self.b_integral + self.tail_bound.unwrap_or(0.0))
    }

    /// `e^{Re c (x-a)/ω}` at every node.
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// `‖B‖` at every node.
    pub fn coupling_norms(&self) -> &[f64] {
        &self.bnorm
    }

    /// Integrands `Φ(t)^{-1} B(t) ξ(t)` at the nodes `lo..=hi`, written
    /// into full-length buffers.
    fn integrands(&self, xi: &[CState], lo: usize, hi: usize, f1: &mut [Complex64], f2: &mut [Complex64]) {
        let w = self.floquet.wronskian;
        for i in lo..=hi {
            let bx0 = xi[i][1] * self.b12[i];
            let bx1 = xi[i][0] * self.b21[i];
            let u = &self.u0[i];
            let v = &self.v0[i];
            f1[i] = (v[1] * bx0 - v[0] * bx1) / w;
            f2[i] = (u[0] * bx1 - u[1] * bx0) / w;
        }
    }

    fn combine(&self, i: usize, c1: Complex64, c2: Complex64) -> CState {
        let u = &self.u0[i];
        let v = &self.v0[i];
        [-(u[0] * c1 + v[0] * c2), -(u[1] * c1 + v[1] * c2)]
    }

    /// Windows `(lo, hi)` from right to left with `E ∫ K‖B‖ ≤ 1` on each.
    fn windows(&self) -> Vec<(usize, usize)> {
        let n = self.grid.len();
        let kb: Vec<f64> = self.bnorm.iter().zip(self.kernel.iter()).map(|(b, k)| b * k).collect();
        let cum = self.grid.cumulative_from_end(&kb);
        let mut out = Vec::new();
        let mut hi = n - 1;
        const MIN_NODES: usize = 8;
        while hi > 0 {
            let mut lo = hi;
            while lo > 0 && (self.e_const * (cum[lo - 1] - cum[hi]) <= 1.0 || hi - lo < MIN_NODES) {
                lo -= 1;
            }
            // Leave no stub shorter than a stencil at the left end.
            if lo < MIN_NODES {
                lo = 0;
            }
            out.push((lo, hi));
            hi = lo;
        }
        out
    }
}

/// `(Tξ)` on the grid with the global quadrature rule.
pub fn volterra_apply(setup: &VolterraSetup, xi: &[CState]) -> Result<Vec<CState>> {
    let n = setup.grid.len();
    if xi.len() != n {
        return Err(Error::InvalidParameter(format!("trace has {} samples, grid has {n}", xi.len())));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut f1 = vec![zero; n];
    let mut f2 = vec![zero; n];
    setup.integrands(xi, 0, n - 1, &mut f1, &mut f2);
    let i1 = setup.grid.cumulative_from_end(&f1);
    let i2 = setup.grid.cumulative_from_end(&f2);
    Ok((0..n).map(|i| setup.combine(i, i1[i], i2[i])).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolutionKind {
    U1Decaying,
    V1Second,
}

impl SolutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolutionKind::U1Decaying => "u1_decaying",
            SolutionKind::V1Second => "v1_second",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Fixed point of `ξ = φ + Tξ`.
    Neumann,
    /// Direct propagation of the perturbed system from `a`.
    Forward,
}

/// A solution of the perturbed system sampled on the setup grid.
#[derive(Clone, Debug)]
pub struct PerturbedSolution {
    pub kind: SolutionKind,
    pub method: Method,
    pub lambda: f64,
    pub c: Complex64,
    pub xs: Vec<f64>,
    pub states: Vec<CState>,
    /// The base solution `φ` the solution is asymptotic to.
    pub reference: Vec<CState>,
    /// Weight of the sup norm used for deltas and the decay metric.
    pub norm_weight: Vec<f64>,
    /// Relative weighted sup-norm change per iteration, all windows in order.
    pub deltas: Vec<f64>,
    pub iterations: usize,
    pub windows: usize,
    pub truncation: f64,
    /// `W(u₁, v₁)` for a second solution.
    pub wronskian_with_u1: Option<Complex64>,
}

impl PerturbedSolution {
    /// State at `x = a`.
    pub fn initial(&self) -> CState {
        self.states[0]
    }

    /// Weighted sup norm.
    pub fn norm(&self) -> f64 {
        weighted_sup(&self.states, &self.norm_weight)
    }

    /// Weighted deviation `w(x) ‖ξ(x) - φ(x)‖` at every node.
    pub fn deviation(&self) -> Vec<f64> {
        self.states
            .iter()
            .zip(self.reference.iter())
            .zip(self.norm_weight.iter())
            .map(|((s, r), w)| w * cnorm(&[s[0] - r[0], s[1] - r[1]]))
            .collect()
    }
}

fn weighted_sup(v: &[CState], w: &[f64]) -> f64 {
    v.iter().zip(w.iter()).map(|(s, w)| w * cnorm(s)).fold(0.0, f64::max)
}

fn solve_fixed_point(setup: &VolterraSetup, phi: &[CState], norm_w: &[f64]) -> Result<(Vec<CState>, Vec<f64>, usize, usize)> {
    let n = setup.grid.len();
    let opts = &setup.options;
    let zero = Complex64::new(0.0, 0.0);
    let mut xi = phi.to_vec();
    let mut f1 = vec![zero; n];
    let mut f2 = vec![zero; n];
    let mut carry1 = zero;
    let mut carry2 = zero;
    let mut deltas = Vec::new();
    let mut iterations = 0;
    let windows = setup.windows();
    for &(lo, hi) in &windows {
        let rule = setup.grid.window(lo, hi);
        let mut converged = false;
        let mut last = f64::INFINITY;
        for _ in 0..opts.max_iter {
            setup.integrands(&xi, lo, hi, &mut f1, &mut f2);
            let i1 = rule.cumulative_from_end(&f1);
            let i2 = rule.cumulative_from_end(&f2);
            let mut change: f64 = 0.0;
            let mut size: f64 = 0.0;
            for i in lo..=hi {
                let t = setup.combine(i, i1[i - lo] + carry1, i2[i - lo] + carry2);
                let new = [phi[i][0] + t[0], phi[i][1] + t[1]];
                change = change.max(norm_w[i] * cnorm(&[new[0] - xi[i][0], new[1] - xi[i][1]]));
                size = size.max(norm_w[i] * cnorm(&new));
                xi[i] = new;
            }
            iterations += 1;
            last = if size > 0.0 { change / size } else { 0.0 };
            deltas.push(last);
            if !last.is_finite() {
                return Err(Error::NonFinite { x: setup.grid.nodes()[lo].x });
            }
            if last < opts.iter_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { iterations, last_delta: last, bound: setup.neumann_bound() });
        }
        setup.integrands(&xi, lo, hi, &mut f1, &mut f2);
        let i1 = rule.cumulative_from_end(&f1);
        let i2 = rule.cumulative_from_end(&f2);
        carry1 += i1[0];
        carry2 += i2[0];
    }
    Ok((xi, deltas, iterations, windows.len()))
}

/// The solution `u₁ = (I - T)^{-1} u₀`, asymptotic to the base solution
/// `u₀` with multiplier `e^{-c}`.
pub fn build_decaying_solution(setup: &VolterraSetup) -> Result<PerturbedSolution> {
    if setup.is_jordan() && setup.pair.moment_class() < 1 {
        return Err(Error::Precondition(format!(
            "λ = {} is a band edge with a Jordan block; the decaying solution needs moment class ≥ 1",
            setup.lambda
        )));
    }
    let norm_w: Vec<f64> = setup.weight.clone();
    let (states, deltas, iterations, windows) = solve_fixed_point(setup, &setup.u0, &norm_w)?;
    Ok(PerturbedSolution {
        kind: SolutionKind::U1Decaying,
        method: Method::Neumann,
        lambda: setup.lambda,
        c: setup.floquet.c,
        xs: setup.grid.xs(),
        states,
        reference: setup.u0.clone(),
        norm_weight: norm_w,
        deltas,
        iterations,
        windows,
        truncation: setup.truncation,
        wronskian_with_u1: None,
    })
}

/// Threshold below which `|W(u₁, v₁)|` signals dependent solutions.
pub const INDEPENDENCE_THRESHOLD: f64 = 1e-8;

/// A second solution `v₁` independent of `u₁`.
///
/// - inside a band (and at diagonalizable edges): `v₁ = (I - T)^{-1} v₀`;
/// - at a Jordan edge (moment class 2): the same fixed point for the
///   linearly growing `v₀`, measured in the norm weighted by
///   `1 / (1 + (x-a)/ω)`;
/// - in a gap: the perturbed system propagated forward from `v₀(a)`.
pub fn build_second_solution(setup: &VolterraSetup) -> Result<PerturbedSolution> {
    Ok(build_solution_pair(setup)?.1)
}

/// `(u₁, v₁)` sharing one setup.
pub fn build_solution_pair(setup: &VolterraSetup) -> Result<(PerturbedSolution, PerturbedSolution)> {
    let structure = setup.structure();
    if structure == Structure::ParabolicJordan && setup.pair.moment_class() < 2 {
        return Err(Error::Precondition(format!(
            "λ = {} is a band edge with a Jordan block; the second solution needs moment class 2",
            setup.lambda
        )));
    }
    let u1 = build_decaying_solution(setup)?;
    let a = setup.pair.a();
    let omega = setup.pair.period();
    let mut v1 = if structure == Structure::Hyperbolic {
        let y0 = setup.floquet.v0;
        let xs = setup.grid.xs();
        let re = quadode::states_at(setup.pair.pert(), setup.lambda, a, [y0[0].re, y0[1].re], &xs, setup.options.tol)?;
        let w: Vec<f64> = setup.weight.iter().map(|w| 1.0 / w).collect();
        PerturbedSolution {
            kind: SolutionKind::V1Second,
            method: Method::Forward,
            lambda: setup.lambda,
            c: setup.floquet.c,
            xs,
            states: re.iter().map(|s| creal(*s)).collect(),
            reference: setup.v0.clone(),
            norm_weight: w,
            deltas: Vec::new(),
            iterations: 0,
            windows: 0,
            truncation: setup.truncation,
            wronskian_with_u1: None,
        }
    } else {
        let norm_w: Vec<f64> = if setup.is_jordan() {
            setup.grid.nodes().iter().map(|n| 1.0 / (1.0 + (n.x - a) / omega)).collect()
        } else {
            vec![1.0; setup.grid.len()]
        };
        let (states, deltas, iterations, windows) = solve_fixed_point(setup, &setup.v0, &norm_w)?;
        PerturbedSolution {
            kind: SolutionKind::V1Second,
            method: Method::Neumann,
            lambda: setup.lambda,
            c: setup.floquet.c,
            xs: setup.grid.xs(),
            states,
            reference: setup.v0.clone(),
            norm_weight: norm_w,
            deltas,
            iterations,
            windows,
            truncation: setup.truncation,
            wronskian_with_u1: None,
        }
    };
    let w = u1.states[0][0] * v1.states[0][1] - u1.states[0][1] * v1.states[0][0];
    if w.norm() <= INDEPENDENCE_THRESHOLD {
        return Err(Error::DependentSolutions(w.norm()));
    }
    v1.wronskian_with_u1 = Some(w);
    Ok((u1, v1))
}

/// `W(ξ, η)(x) = ξ₁η₂ - ξ₂η₁` at every node; constant for two solutions of
/// the same system.
pub fn wronskian_trace(xi: &PerturbedSolution, eta: &PerturbedSolution) -> Vec<Complex64> {
    xi.states.iter().zip(eta.states.iter()).map(|(x, y)| x[0] * y[1] - x[1] * y[0]).collect()
}

/// Residual of `ξ' = (A + B) ξ` from fourth-order central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualReport {
    /// `sup w(x) ‖ξ' - (A+B)ξ‖ / ‖ξ‖_w` over the checked nodes.
    pub residual_sup: f64,
    /// Position of the largest residual.
    pub at: f64,
    pub checked_nodes: usize,
}

/// Nodes `i` where the five-point stencil `i-2..=i+2` is uniform and stays
/// inside one smooth piece, with the step.
pub(crate) fn stencil_nodes(grid: &Grid) -> Vec<(usize, f64)> {
    let nodes = grid.nodes();
    let mut out = Vec::new();
    for &(s, e) in grid.pieces() {
        if e < s + 4 {
            continue;
        }
        for i in s + 2..=e - 2 {
            let h = nodes[i + 1].x - nodes[i].x;
            let uniform = (i - 2..i + 2).all(|j| abs(nodes[j + 1].x - nodes[j].x - h) <= 1e-9 * h);
            if uniform && nodes[i].side == Side::Both {
                out.push((i, h));
            }
        }
    }
    out
}

/// Fourth-order central difference of `f` at a stencil node.
pub(crate) fn central_difference<T>(f: &[T], i: usize, h: f64) -> T
where
    T: Copy + core::ops::Add<Output = T> + core::ops::Sub<Output = T> + core::ops::Mul<f64, Output = T>,
{
    (f[i - 2] - f[i - 1] * 8.0 + f[i + 1] * 8.0 - f[i + 2]) * (1.0 / (12.0 * h))
}

pub fn residual_report(setup: &VolterraSetup, sol: &PerturbedSolution) -> ResidualReport {
    let grid = &setup.grid;
    let pert = setup.pair.pert();
    let lambda = setup.lambda;
    let norm = sol.norm().max(f64::MIN_POSITIVE);
    let y0: Vec<Complex64> = sol.states.iter().map(|s| s[0]).collect();
    let y1: Vec<Complex64> = sol.states.iter().map(|s| s[1]).collect();
    let mut worst: f64 = 0.0;
    let mut at = grid.a();
    let stencil = stencil_nodes(grid);
    for &(i, h) in &stencil {
        let d = [central_difference(&y0, i, h), central_difference(&y1, i, h)];
        let t = pert.eval(grid.eval_point(i));
        let rhs = [y1[i] * t.inv_p, y0[i] * (t.q - lambda * t.r)];
        let r = sol.norm_weight[i] * cnorm(&[d[0] - rhs[0], d[1] - rhs[1]]) / norm;
        if r > worst {
            worst = r;
            at = grid.nodes()[i].x;
        }
    }
    ResidualReport { residual_sup: worst, at, checked_nodes: stencil.len() }
}

/// Weighted deviation from the base solution near `X`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelReport {
    /// `sup w(x) ‖ξ - φ‖` over the last period before `X`.
    pub last_period: f64,
    /// `E ‖ξ‖_w ∫_X^∞ K‖B‖`, bounding the truncated contribution.
    pub tail_term: Option<f64>,
    /// `last_period + tail_term`.
    pub pixel_tail: Option<f64>,
}

pub fn pixel_report(setup: &VolterraSetup, sol: &PerturbedSolution) -> PixelReport {
    let dev = sol.deviation();
    let start = setup.grid.cell_start(setup.grid.periods() - 1);
    let last_period = dev[start..].iter().cloned().fold(0.0, f64::max);
    let tail_term = setup.tail_bound.map(|t| setup.e_const * sol.norm() * t);
    PixelReport { last_period, tail_term, pixel_tail: tail_term.map(|t| t + last_period) }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GronwallReport {
    pub e_const: f64,
    /// `max ‖ξ(x)‖ / envelope(x)` over the grid.
    pub max_ratio: f64,
    pub at: f64,
    /// `‖ξ(x)‖ ≤ g(x) E ‖ξ(a)‖ exp(E ∫_a^x K‖B‖)` held at every node.
    pub holds: bool,
}

/// Check the Gronwall envelope, with growth `g(x) = e^{Re c (x-a)/ω}`
/// (or `1 + (x-a)/ω` at a Jordan edge).
pub fn gronwall_envelope(setup: &VolterraSetup, sol: &PerturbedSolution) -> GronwallReport {
    let grid = &setup.grid;
    let kb: Vec<f64> = setup.bnorm.iter().zip(setup.kernel.iter()).map(|(b, k)| b * k).collect();
    let cum = grid.cumulative_from_start(&kb);
    let a = grid.a();
    let omega = grid.omega();
    let e = setup.e_const;
    let y0 = cnorm(&sol.states[0]);
    let mut max_ratio: f64 = 0.0;
    let mut at = a;
    for (i, node) in grid.nodes().iter().enumerate() {
        let g = if setup.is_jordan() { 1.0 + (node.x - a) / omega } else { setup.weight[i] };
        let envelope = g * e * y0 * exp(e * cum[i]);
        let r = cnorm(&sol.states[i]) / envelope;
        if r > max_ratio {
            max_ratio = r;
            at = node.x;
        }
    }
    GronwallReport { e_const: e, max_ratio, at, holds: max_ratio <= 1.0 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeumannReport {
    /// `‖T^j φ‖_w` for `j = 0..=n`.
    pub norms: Vec<f64>,
    /// `E ∫_a^∞ K‖B‖`.
    pub bound: f64,
    /// `‖T^{j+1}φ‖ / ‖T^j φ‖`.
    pub ratios: Vec<f64>,
    /// Every ratio is at most `bound / (j + 1)`.
    pub ratio_test: bool,
    /// `‖T^j φ‖ ≤ ‖φ‖ bound^j / j!` for every `j`.
    pub factorial_test: bool,
}

/// Successive Neumann terms `T^j φ` of the decaying solution.
pub fn neumann_terms(setup: &VolterraSetup, n: usize) -> Result<NeumannReport> {
    let w = &setup.weight;
    let mut term = setup.u0.clone();
    let mut norms = vec![weighted_sup(&term, w)];
    for _ in 0..n {
        term = volterra_apply(setup, &term)?;
        norms.push(weighted_sup(&term, w));
    }
    let bound = setup.neumann_bound();
    let ratios: Vec<f64> = norms.windows(2).map(|p| if p[0] > 0.0 { p[1] / p[0] } else { 0.0 }).collect();
    // Small slack for quadrature error on terms that have become tiny.
    let slack = 1e-12 * norms[0];
    let ratio_test = norms
        .windows(2)
        .enumerate()
        .all(|(j, p)| p[1] <= p[0] * bound / (j + 1) as f64 + slack);
    let mut fact = 1.0;
    let mut power = 1.0;
    let mut factorial_test = true;
    for (j, v) in norms.iter().enumerate() {
        if j > 0 {
            fact *= j as f64;
            power *= bound;
        }
        if *v > norms[0] * power / fact + slack {
            factorial_test = false;
        }
    }
    Ok(NeumannReport { norms, bound, ratios, ratio_test, factorial_test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_builtin, PerturbationTerm, Profile};
    use crate::math::PI;

    fn free_pair(profile: Option<Profile>, k: u8) -> PerturbedPair {
        let base = make_builtin("free", &[PI]).unwrap();
        match profile {
            Some(p) => PerturbedPair::new(base, vec![PerturbationTerm::q(p)], k).unwrap(),
            None => PerturbedPair::unperturbed(base).unwrap(),
        }
    }

    #[test]
    fn zero_coupling_gives_base_solution() {
        let pair = free_pair(None, 2);
        let setup = VolterraSetup::new(&pair, -1.0, &VolterraOptions::default()).unwrap();
        let sol = build_decaying_solution(&setup).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.states, setup.u0);
        let t = volterra_apply(&setup, &setup.u0).unwrap();
        assert!(t.iter().all(|s| cnorm(s) == 0.0));
    }

    #[test]
    fn zero_trace_maps_to_zero() {
        let pair = free_pair(Some(Profile::ExpDecay { amplitude: 1.0, rate: 1.0 }), 2);
        let setup = VolterraSetup::new(&pair, -1.0, &VolterraOptions::default()).unwrap();
        let zero = vec![[Complex64::new(0.0, 0.0); 2]; setup.grid.len()];
        let t = volterra_apply(&setup, &zero).unwrap();
        assert!(t.iter().all(|s| cnorm(s) == 0.0));
    }

    #[test]
    fn operator_norm_bound_holds() {
        let pair = free_pair(Some(Profile::ExpDecay { amplitude: 1.0, rate: 1.0 }), 2);
        let setup = VolterraSetup::new(&pair, -1.0, &VolterraOptions::default()).unwrap();
        let xi = setup.u0.clone();
        let t = volterra_apply(&setup, &xi).unwrap();
        let lhs = weighted_sup(&t, setup.weights());
        let rhs = setup.e_const * weighted_sup(&xi, setup.weights()) * setup.b_integral;
        assert!(lhs <= rhs, "{lhs} > {rhs}");
    }

    #[test]
    fn decaying_solution_solves_perturbed_equation() {
        let pair = free_pair(Some(Profile::ExpDecay { amplitude: -1.0, rate: 1.0 }), 2);
        let setup = VolterraSetup::new(&pair, -1.0, &VolterraOptions::default()).unwrap();
        let sol = build_decaying_solution(&setup).unwrap();
        let res = residual_report(&setup, &sol);
        assert!(res.residual_sup < 1e-8, "{res:?}");
        // u₁ e^{x} tends to a constant
        let n = sol.states.len();
        let tail: Vec<f64> = (n - 50..n).map(|i| sol.states[i][0].re * sol.xs[i].exp()).collect();
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-8);
    }

    #[test]
    fn unperturbed_second_solution_is_base() {
        let pair = free_pair(None, 2);
        let setup = VolterraSetup::new(&pair, 0.5, &VolterraOptions::default()).unwrap();
        let (_, v) = build_solution_pair(&setup).unwrap();
        assert_eq!(v.states, setup.v0);
    }

    #[test]
    fn interior_second_solution_approaches_base() {
        let pair = free_pair(Some(Profile::ExpDecay { amplitude: 1.0, rate: 1.0 }), 0);
        let setup = VolterraSetup::new(&pair, 0.5, &VolterraOptions::default()).unwrap();
        let (u, v) = build_solution_pair(&setup).unwrap();
        assert!(pixel_report(&setup, &v).pixel_tail.unwrap() < 1e-6);
        assert!(v.wronskian_with_u1.unwrap().norm() > INDEPENDENCE_THRESHOLD);
        assert!(residual_report(&setup, &u).residual_sup < 1e-7);
    }

    #[test]
    fn edge_pair_has_constant_wronskian() {
        let pair = free_pair(Some(Profile::Gaussian { amplitude: 1.0, width: 1.0 }), 2);
        let setup = VolterraSetup::new(&pair, 0.0, &VolterraOptions::default()).unwrap();
        assert!(setup.is_jordan());
        let (u, v) = build_solution_pair(&setup).unwrap();
        let w = wronskian_trace(&u, &v);
        assert!(w[0].norm() > 1e-2);
        for z in &w {
            assert!((z - w[0]).norm() < 1e-7 * w[0].norm(), "{z} vs {}", w[0]);
        }
    }

    #[test]
    fn edge_needs_moment_class() {
        let pair = free_pair(Some(Profile::Gaussian { amplitude: 1.0, width: 1.0 }), 1);
        let setup = VolterraSetup::new(&pair, 0.0, &VolterraOptions::default()).unwrap();
        assert!(build_decaying_solution(&setup).is_ok());
        assert!(matches!(build_solution_pair(&setup), Err(Error::Precondition(_))));
        let pair = free_pair(Some(Profile::Gaussian { amplitude: 1.0, width: 1.0 }), 0);
        let setup = VolterraSetup::new(&pair, 0.0, &VolterraOptions::default()).unwrap();
        assert!(matches!(build_decaying_solution(&setup), Err(Error::Precondition(_))));
    }

    #[test]
    fn mathieu_edge_decay_metric() {
        let base = make_builtin("mathieu", &[1.0]).unwrap();
        let pair = PerturbedPair::new(base, vec![PerturbationTerm::q(Profile::Gaussian { amplitude: 1.0, width: 1.0 })], 2).unwrap();
        let setup = VolterraSetup::new(&pair, -0.4551386041070509, &VolterraOptions::default()).unwrap();
        assert!(setup.is_jordan());
        let u = build_decaying_solution(&setup).unwrap();
        assert!(pixel_report(&setup, &u).pixel_tail.unwrap() < 1e-6);
        assert!(residual_report(&setup, &u).residual_sup < 1e-7);
    }

    #[test]
    fn gronwall_and_neumann_bounds() {
        let pair = free_pair(Some(Profile::ExpDecay { amplitude: 1.0, rate: 1.0 }), 0);
        let setup = VolterraSetup::new(&pair, -2.0, &VolterraOptions::default()).unwrap();
        let u = build_decaying_solution(&setup).unwrap();
        let g = gronwall_envelope(&setup, &u);
        assert!(g.holds && g.max_ratio < 0.9, "{g:?}");
        let n = neumann_terms(&setup, 6).unwrap();
        assert!(n.ratio_test && n.factorial_test, "{n:?}");
    }

    #[test]
    fn elliptic_weight_is_one() {
        let pair = free_pair(Some(Profile::ExpDecay { amplitude: 1.0, rate: 1.0 }), 0);
        let setup = VolterraSetup::new(&pair, 1.0, &VolterraOptions::default()).unwrap();
        assert!(setup.weights().iter().all(|w| *w == 1.0));
    }
}
