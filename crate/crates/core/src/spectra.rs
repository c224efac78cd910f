//! Discrete eigenvalues in spectral gaps, oscillation counts, the Green's
//! operator of a gap point and band-edge tests.
//!
//! Half-line problems live on `[a, ∞)` with the condition
//! `cos α · u(a) + sin α · (p₁u')(a) = 0`. Full-line problems are split at
//! `a`; the left half is handled in the reflected coordinate `2a - x`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::coefficients::{Coefficients, FullLine, PerturbedPair};
use crate::error::{Error, Result};
use crate::floquet::{self, Structure};
use crate::grid::Grid;
use crate::linalg::CState;
use crate::math::{abs, atan2, cos, exp, powi, rem_euclid, sin, PI};
use crate::oracle::{self, OracleProblem, OracleReport};
use crate::perturb::{self, VolterraOptions, VolterraSetup};
use crate::quadode;

/// `cos α · u(a) + sin α · (p₁u')(a) = 0` with `α ∈ [0, π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryCondition {
    alpha: f64,
}

impl BoundaryCondition {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("boundary angle {alpha} is not finite")));
        }
        Ok(BoundaryCondition { alpha: rem_euclid(alpha, PI) })
    }

    pub fn dirichlet() -> Self {
        BoundaryCondition { alpha: 0.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `cos α · u + sin α · pu`.
    pub fn apply(&self, y: [f64; 2]) -> f64 {
        cos(self.alpha) * y[0] + sin(self.alpha) * y[1]
    }

    /// Initial data `(sin α, -cos α)` satisfying the condition.
    pub fn data(&self) -> [f64; 2] {
        [sin(self.alpha), -cos(self.alpha)]
    }

    /// Prüfer angle of the condition, `-α mod π`.
    fn angle(&self) -> f64 {
        rem_euclid(-self.alpha, PI)
    }
}

/// Maps a function over spectral parameters; lets callers parallelise
/// independent solves.
pub trait Executor {
    fn map<T, F>(&self, xs: &[f64], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(f64) -> T + Sync + Send;
}

/// In-order evaluation on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, xs: &[f64], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(f64) -> T + Sync + Send,
    {
        xs.iter().map(|x| f(*x)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapOptions {
    /// Uniform samples of the shooting function over the gap.
    pub samples: usize,
    /// Bisection tolerance for eigenvalues.
    pub tol: f64,
    /// The analysed interval is the gap shrunk by this fraction of its
    /// width at each end.
    pub edge_margin: f64,
    pub volterra: VolterraOptions,
    /// Oracle truncation in periods (before the one-third phase shift).
    pub oracle_periods: usize,
    /// Oracle intervals per period.
    pub oracle_per_period: usize,
}

impl Default for GapOptions {
    fn default() -> Self {
        GapOptions {
            samples: 200,
            tol: 1e-9,
            edge_margin: 1e-3,
            volterra: VolterraOptions::default(),
            oracle_periods: 12,
            oracle_per_period: 256,
        }
    }
}

impl GapOptions {
    /// The open gap shrunk by the edge margin.
    pub fn analysed_interval(&self, gap: (f64, f64)) -> (f64, f64) {
        let d = self.edge_margin * (gap.1 - gap.0);
        (gap.0 + d, gap.1 - d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapEigenvalueReport {
    pub gap: (f64, f64),
    /// Interval actually searched.
    pub interval: (f64, f64),
    pub eigenvalues: Vec<f64>,
    pub count_shooting: usize,
    pub count_wronskian: Option<usize>,
    pub count_oracle: Option<usize>,
    /// All available counts agree and the oracle was stable.
    pub agreement: bool,
    /// `(λ', m(λ'))` samples of the shooting function.
    pub scan: Vec<(f64, f64)>,
    pub wronskian: Option<WronskianCount>,
    pub oracle: Option<OracleReport>,
}

impl GapEigenvalueReport {
    fn settle(&mut self) {
        let oracle_ok = self.oracle.as_ref().is_none_or(|o| o.stable);
        let mut counts = vec![self.count_shooting];
        counts.extend(self.count_wronskian);
        counts.extend(self.count_oracle);
        self.agreement = oracle_ok && counts.iter().all(|c| *c == counts[0]);
    }
}

/// Reject intervals that do not lie in a gap of the base problem.
pub fn check_gap(pair: &PerturbedPair, gap: (f64, f64)) -> Result<()> {
    oracle::check_gap(pair.base(), gap)
}

/// `(u₁, p₁u₁')(a)` of the decaying solution at `λ`.
pub fn decaying_data(pair: &PerturbedPair, lambda: f64, opts: &VolterraOptions) -> Result<[f64; 2]> {
    let setup = VolterraSetup::new(pair, lambda, opts)?;
    let u = perturb::build_decaying_solution(&setup)?;
    let y = u.initial();
    Ok([y[0].re, y[1].re])
}

fn aligned(prev: [f64; 2], y: [f64; 2]) -> [f64; 2] {
    if prev[0] * y[0] + prev[1] * y[1] < 0.0 { [-y[0], -y[1]] } else { y }
}

fn cos_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    let n = libm::hypot(a[0], a[1]) * libm::hypot(b[0], b[1]);
    if n == 0.0 { 1.0 } else { abs(a[0] * b[0] + a[1] * b[1]) / n }
}

/// Zeros of `λ' ↦ f(y(λ'))` over a sampled interval, where `y` is defined
/// up to sign and is aligned along the scan.
struct SignScan<'a, Y, F>
where
    Y: Fn(f64) -> Result<[f64; 2]> + Sync + Send,
    F: Fn([f64; 2]) -> f64,
{
    data: &'a Y,
    value: F,
    tol: f64,
}

impl<Y, F> SignScan<'_, Y, F>
where
    Y: Fn(f64) -> Result<[f64; 2]> + Sync + Send,
    F: Fn([f64; 2]) -> f64,
{
    /// Fill in samples where consecutive data turn by more than 45°, so
    /// that sign alignment is unambiguous.
    fn densify(&self, pts: &mut Vec<(f64, [f64; 2])>) -> Result<()> {
        let mut i = 0;
        let mut inserted = 0;
        while i + 1 < pts.len() {
            let (l0, y0) = pts[i];
            let (l1, y1) = pts[i + 1];
            if cos_between(y0, y1) < 0.7 && l1 - l0 > self.tol && inserted < 4096 {
                let m = 0.5 * (l0 + l1);
                pts.insert(i + 1, (m, (self.data)(m)?));
                inserted += 1;
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    fn align(&self, pts: &mut [(f64, [f64; 2])]) {
        for i in 1..pts.len() {
            pts[i].1 = aligned(pts[i - 1].1, pts[i].1);
        }
    }

    fn bisect(&self, mut lo: (f64, [f64; 2]), mut hi: (f64, [f64; 2])) -> Result<f64> {
        let mut f_lo = (self.value)(lo.1);
        while hi.0 - lo.0 > self.tol {
            let m = 0.5 * (lo.0 + hi.0);
            let y = aligned(lo.1, (self.data)(m)?);
            let f = (self.value)(y);
            if f == 0.0 {
                return Ok(m);
            }
            if (f > 0.0) == (f_lo > 0.0) {
                lo = (m, y);
                f_lo = f;
            } else {
                hi = (m, y);
            }
        }
        Ok(0.5 * (lo.0 + hi.0))
    }

    /// Zeros from sign changes, plus a local resampling around every
    /// interior minimum of `|f|` without a sign change.
    fn zeros(&self, pts: &mut Vec<(f64, [f64; 2])>) -> Result<Vec<f64>> {
        self.densify(pts)?;
        self.align(pts);
        let vals: Vec<f64> = pts.iter().map(|p| (self.value)(p.1)).collect();
        let mut roots = Vec::new();
        for i in 0..pts.len() - 1 {
            if vals[i] == 0.0 {
                roots.push(pts[i].0);
            } else if vals[i] * vals[i + 1] < 0.0 {
                roots.push(self.bisect(pts[i], pts[i + 1])?);
            }
        }
        for i in 1..pts.len() - 1 {
            let (a, b, c) = (abs(vals[i - 1]), abs(vals[i]), abs(vals[i + 1]));
            let no_change = vals[i - 1] * vals[i] > 0.0 && vals[i] * vals[i + 1] > 0.0;
            if b < a && b < c && no_change {
                let lo = pts[i - 1].0;
                let hi = pts[i + 1].0;
                let mut local: Vec<(f64, [f64; 2])> = vec![pts[i - 1]];
                for j in 1..9 {
                    let l = lo + (hi - lo) * j as f64 / 9.0;
                    local.push((l, (self.data)(l)?));
                }
                local.push(pts[i + 1]);
                self.align(&mut local);
                let lv: Vec<f64> = local.iter().map(|p| (self.value)(p.1)).collect();
                for j in 0..local.len() - 1 {
                    if lv[j] * lv[j + 1] < 0.0 {
                        roots.push(self.bisect(local[j], local[j + 1])?);
                    }
                }
            }
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| abs(*a - *b) <= 2.0 * self.tol);
        Ok(roots)
    }
}

fn sample_points(interval: (f64, f64), samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    (0..n).map(|j| interval.0 + (interval.1 - interval.0) * j as f64 / (n - 1) as f64).collect()
}

/// Shooting part of the gap analysis: zeros of
/// `m(λ') = cos α · u₁(a, λ') + sin α · (p₁u₁')(a, λ')`.
pub fn gap_eigenvalues_halfline<E: Executor>(
    pair: &PerturbedPair,
    bc: BoundaryCondition,
    gap: (f64, f64),
    opts: &GapOptions,
    exec: &E,
) -> Result<GapEigenvalueReport> {
    check_gap(pair, gap)?;
    let interval = opts.analysed_interval(gap);
    let lambdas = sample_points(interval, opts.samples);
    let vopts = opts.volterra;
    let data = move |l: f64| decaying_data(pair, l, &vopts);
    let mut pts = Vec::with_capacity(lambdas.len());
    for (l, y) in lambdas.iter().zip(exec.map(&lambdas, data)) {
        pts.push((*l, y?));
    }
    let scan = SignScan { data: &data, value: |y: [f64; 2]| bc.apply(y), tol: opts.tol };
    let eigenvalues = scan.zeros(&mut pts)?;
    let trace = pts.iter().map(|(l, y)| (*l, bc.apply(*y))).collect();
    let mut report = GapEigenvalueReport {
        gap,
        interval,
        count_shooting: eigenvalues.len(),
        eigenvalues,
        count_wronskian: None,
        count_oracle: None,
        agreement: true,
        scan: trace,
        wronskian: None,
        oracle: None,
    };
    report.settle();
    Ok(report)
}

/// Shooting, Wronskian and oracle counts over one gap.
pub fn gap_report_halfline<E: Executor>(
    pair: &PerturbedPair,
    bc: BoundaryCondition,
    gap: (f64, f64),
    opts: &GapOptions,
    exec: &E,
) -> Result<GapEigenvalueReport> {
    let mut report = gap_eigenvalues_halfline(pair, bc, gap, opts, exec)?;
    let (mu, lambda) = report.interval;
    let w = wronskian_zero_count(pair, bc, mu, lambda, &opts.volterra)?;
    report.count_wronskian = Some(w.count);
    report.wronskian = Some(w);
    let (length, n) = oracle_size(pair.base(), report.interval, opts)?;
    let o = oracle::oracle_gap_eigenvalues(OracleProblem::HalfLine { pair, alpha: bc.alpha() }, report.interval, length, n)?;
    report.count_oracle = Some(o.count());
    report.oracle = Some(o);
    report.settle();
    Ok(report)
}

/// Oracle truncation: at least `oracle_periods`, and long enough that the
/// slowest decaying gap solution in the interval drops by `e^{-ORACLE_DECAY}`.
pub fn oracle_size(base: &crate::coefficients::CoefficientModel, interval: (f64, f64), opts: &GapOptions) -> Result<(f64, usize)> {
    let omega = base.base_period();
    let mut rate = f64::INFINITY;
    for l in [interval.0, interval.1] {
        let m = floquet::monodromy(base, l, opts.volterra.tol)?;
        rate = rate.min(floquet::decay_rate(&m));
    }
    let need = if rate > 0.0 { ORACLE_DECAY / rate } else { f64::INFINITY };
    let periods = (libm::ceil(need / omega) as usize).clamp(opts.oracle_periods, ORACLE_MAX_PERIODS);
    let length = oracle::default_length(omega, periods);
    let n = libm::ceil(length / omega * opts.oracle_per_period as f64) as usize;
    Ok((length, n))
}

/// Decay exponent over the oracle half-length.
pub const ORACLE_DECAY: f64 = 15.0;
/// Cap on the oracle half-length in periods.
pub const ORACLE_MAX_PERIODS: usize = 4000;

/// Sign changes of `W₁(x) = W(u₁(·, μ), u₁(·, λ))(x)` on `[a, X]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WronskianCount {
    pub mu: f64,
    pub lambda: f64,
    pub truncation: f64,
    /// Positions of sign changes of `W₁` in `(a, X]`.
    pub zero_positions: Vec<f64>,
    pub zeros: usize,
    /// 1 when the boundary angles at `a` add one eigenvalue to the zero
    /// count, 0 otherwise.
    pub boundary_correction: usize,
    /// `zeros + boundary_correction`: eigenvalues in `(μ, λ)` under the
    /// boundary condition.
    pub count: usize,
    /// `min |W̃₀|` over one period, `W̃₀` the rescaled base Wronskian.
    pub gamma: f64,
    /// Point past which the rescaled deviation `|W̃₀ - W̃₁|` stays below
    /// `γ`, so no zeros can follow.
    pub cutoff: Option<f64>,
    /// `γ > 0` and the cutoff lies inside the computed range.
    pub certified: bool,
    pub xs: Vec<f64>,
    pub w: Vec<f64>,
}

fn prufer(y: [f64; 2]) -> f64 {
    rem_euclid(atan2(y[0], y[1]), PI)
}

/// Oscillation count between two points of a gap.
///
/// The zeros of `W₁` in `(a, ∞)` are finite and, with the Prüfer angles of
/// `u₁(a, μ)` and `u₁(a, λ)` relative to the boundary condition, give the
/// number of eigenvalues in `(μ, λ)`: the angle at `a` decreases in the
/// spectral parameter and `W₁` vanishes whenever the two angles differ by a
/// multiple of π, so the count is `zeros` plus one when a multiple of π of
/// the boundary angle falls in the residual turn.
pub fn wronskian_zero_count(
    pair: &PerturbedPair,
    bc: BoundaryCondition,
    mu: f64,
    lambda: f64,
    opts: &VolterraOptions,
) -> Result<WronskianCount> {
    if !(mu < lambda) {
        return Err(Error::InvalidParameter(format!("need μ < λ, got ({mu}, {lambda})")));
    }
    let base = pair.base();
    for l in [mu, lambda] {
        let d = floquet::discriminant(base, l, opts.tol)?;
        if abs(d) < 2.0 - floquet::DEFAULT_TOL_EDGE {
            return Err(Error::Precondition(format!("λ = {l} lies inside a band (D = {d})")));
        }
    }
    // Both solutions on one grid.
    let s_mu = VolterraSetup::new(pair, mu, opts)?;
    let s_la = VolterraSetup::new(pair, lambda, opts)?;
    let x = s_mu.truncation.max(s_la.truncation);
    let fixed = VolterraOptions { truncation: Some(x), ..*opts };
    let s_mu = if s_mu.truncation < x { VolterraSetup::new(pair, mu, &fixed)? } else { s_mu };
    let s_la = if s_la.truncation < x { VolterraSetup::new(pair, lambda, &fixed)? } else { s_la };
    let u_mu = perturb::build_decaying_solution(&s_mu)?;
    let u_la = perturb::build_decaying_solution(&s_la)?;

    let w: Vec<f64> = u_mu
        .states
        .iter()
        .zip(u_la.states.iter())
        .map(|(m, l)| (m[0] * l[1] - m[1] * l[0]).re)
        .collect();
    let xs = s_mu.grid.xs();
    let mut zero_positions = Vec::new();
    let mut last_sign = 0.0;
    for (i, v) in w.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let s = v.signum();
        if last_sign != 0.0 && s != last_sign && i > 0 {
            zero_positions.push(xs[i]);
        }
        last_sign = s;
    }
    let zeros = zero_positions.len();

    let y_mu = u_mu.initial();
    let y_la = u_la.initial();
    let t_mu = prufer([y_mu[0].re, y_mu[1].re]);
    let t_la = prufer([y_la[0].re, y_la[1].re]);
    let delta = rem_euclid(t_mu - t_la, PI);
    let r = rem_euclid(t_mu - bc.angle(), PI);
    let boundary_correction = usize::from(r < delta);

    // Rescaled base Wronskian and deviation.
    let a = pair.a();
    let omega = pair.period();
    let rate = (s_mu.floquet.c.re + s_la.floquet.c.re) / omega;
    let mut gamma = f64::INFINITY;
    let mut dev = Vec::with_capacity(w.len());
    for (i, node) in s_mu.grid.nodes().iter().enumerate() {
        let scale = exp(rate * (node.x - a));
        let w0 = (s_mu.u0[i][0] * s_la.u0[i][1] - s_mu.u0[i][1] * s_la.u0[i][0]).re;
        if node.period == 0 {
            gamma = gamma.min(abs(scale * w0));
        }
        dev.push(scale * abs(w0 - w[i]));
    }
    // Beyond X both solutions follow the base ones up to the truncated tails.
    let tail_mu = perturb::pixel_report(&s_mu, &u_mu).pixel_tail;
    let tail_la = perturb::pixel_report(&s_la, &u_la).pixel_tail;
    let beyond = match (tail_mu, tail_la) {
        (Some(p), Some(q)) => {
            let su = u_mu.norm() + p;
            let sl = u_la.norm() + q;
            Some(p * sl + q * su)
        }
        _ => None,
    };
    let mut cutoff = None;
    if gamma > 0.0 && beyond.is_some_and(|b| b < gamma) {
        let mut i = dev.len();
        while i > 0 && dev[i - 1] < gamma {
            i -= 1;
        }
        if i < dev.len() {
            cutoff = Some(xs[i]);
        }
    }
    Ok(WronskianCount {
        mu,
        lambda,
        truncation: x,
        zero_positions,
        zeros,
        boundary_correction,
        count: zeros + boundary_correction,
        gamma,
        certified: cutoff.is_some(),
        cutoff,
        xs,
        w,
    })
}

/// Full-line gap analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct FullLineReport {
    pub report: GapEigenvalueReport,
    /// Dirichlet half-line counts on each side.
    pub count_left: usize,
    pub count_right: usize,
    /// `|count_full - count_left - count_right| ≤ 2`.
    pub coupling_bound_holds: bool,
}

/// Data of the left-decaying solution in the actual coordinate at `a`.
fn left_data(line: &FullLine, lambda: f64, opts: &VolterraOptions) -> Result<[f64; 2]> {
    let y = decaying_data(line.left(), lambda, opts)?;
    Ok([y[0], -y[1]])
}

/// Sign changes of `W(u₋(μ), u₊(λ))` over `[a - X, a + X]`, with `u₋`
/// continued to the right of `a` and `u₊` to the left.
fn full_line_wronskian(line: &FullLine, mu: f64, lambda: f64, opts: &VolterraOptions) -> Result<usize> {
    let a = line.a();
    let right = VolterraSetup::new(line.right(), lambda, opts)?;
    let left = VolterraSetup::new(line.left(), mu, opts)?;
    let up = perturb::build_decaying_solution(&right)?;
    let um = perturb::build_decaying_solution(&left)?;
    let yp = up.initial();
    let ym = um.initial();
    // u₋ continued through a into [a, X] (actual coordinate).
    let xs_r = right.grid.xs();
    let um_r = quadode::states_at(line.right().pert(), mu, a, [ym[0].re, -ym[1].re], &xs_r, opts.tol)?;
    // u₊ continued into the reflected left half.
    let xs_l = left.grid.xs();
    let up_l = quadode::states_at(line.left().pert(), lambda, a, [yp[0].re, -yp[1].re], &xs_l, opts.tol)?;
    let mut w: Vec<f64> = Vec::with_capacity(xs_r.len() + xs_l.len());
    // Left half from far to near; reflected flux flips the sign of W.
    for i in (1..xs_l.len()).rev() {
        let m = um.states[i];
        let p = up_l[i];
        w.push(-(m[0].re * p[1] - m[1].re * p[0]));
    }
    for i in 0..xs_r.len() {
        let m = um_r[i];
        let p = up.states[i];
        w.push(m[0] * p[1].re - m[1] * p[0].re);
    }
    // Beyond the computed range both factors are Floquet combinations.
    let xr = *xs_r.last().unwrap_or(&a);
    let xl = *xs_l.last().unwrap_or(&a);
    let rbase = line.right().base();
    let lbase = line.left().base();
    let (fr, hr) = (tail_basis(rbase, mu, xr, opts.tol)?, tail_basis(rbase, lambda, xr, opts.tol)?);
    let (fl, hl) = (tail_basis(lbase, mu, xl, opts.tol)?, tail_basis(lbase, lambda, xl, opts.tol)?);
    let last_r = |v: &[[f64; 2]]| *v.last().unwrap_or(&[0.0; 2]);
    let re = |y: &CState| [y[0].re, y[1].re];
    let cf_r = fr.coordinates(last_r(&um_r));
    let mut ch_r = hr.coordinates(re(up.states.last().unwrap_or(&up.initial())));
    ch_r[1] = 0.0;
    let mut cf_l = fl.coordinates(re(um.states.last().unwrap_or(&um.initial())));
    cf_l[1] = 0.0;
    let ch_l = hl.coordinates(last_r(&up_l));
    let mut left_tail = tail_wronskian(&fl, cf_l, &hl, ch_l, -1.0);
    left_tail.reverse();
    let right_tail = tail_wronskian(&fr, cf_r, &hr, ch_r, 1.0);
    let w = left_tail.into_iter().chain(w).chain(right_tail);

    let mut zeros = 0;
    let mut last = 0.0;
    for v in w {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && v.signum() != last {
            zeros += 1;
        }
        last = v.signum();
    }
    Ok(zeros)
}

const TAIL_SAMPLES: usize = 256;
const TAIL_MAX_PERIODS: usize = 20000;

/// Floquet basis of the base problem at `λ` anchored at `x`: multipliers
/// (decaying first), eigenvectors and transfer matrices over one period.
struct TailBasis {
    rho: [f64; 2],
    vecs: [[f64; 2]; 2],
    phi: Vec<crate::linalg::Mat2>,
}

fn tail_basis(base: &crate::coefficients::CoefficientModel, lambda: f64, x: f64, tol: f64) -> Result<TailBasis> {
    let omega = base.base_period();
    let xs: Vec<f64> = (0..=TAIL_SAMPLES).map(|j| x + j as f64 * omega / TAIL_SAMPLES as f64).collect();
    let mut phi = quadode::transfer_matrices_at(base, lambda, x, &xs, tol)?;
    let m = phi.pop().unwrap_or(crate::linalg::Mat2::IDENTITY);
    let d = m.trace();
    let disc = d * d - 4.0;
    if disc <= 0.0 {
        return Err(Error::Precondition(format!("λ = {lambda} is not in a gap (D = {d})")));
    }
    let root = libm::sqrt(disc);
    let big = 0.5 * (d + d.signum() * root);
    let rho = [1.0 / big, big];
    let [[m11, m12], [m21, m22]] = m.0;
    let vecs = rho.map(|r| {
        let c1 = [m12, r - m11];
        let c2 = [r - m22, m21];
        let n1 = libm::hypot(c1[0], c1[1]);
        let n2 = libm::hypot(c2[0], c2[1]);
        if n1 >= n2 { [c1[0] / n1, c1[1] / n1] } else { [c2[0] / n2, c2[1] / n2] }
    });
    Ok(TailBasis { rho, vecs, phi })
}

impl TailBasis {
    fn coordinates(&self, y: [f64; 2]) -> [f64; 2] {
        let [e, f] = self.vecs;
        let det = e[0] * f[1] - e[1] * f[0];
        [(y[0] * f[1] - y[1] * f[0]) / det, (e[0] * y[1] - e[1] * y[0]) / det]
    }
}

/// `sign · W(f, h)` sampled beyond the anchor, each period rescaled by the
/// dominant multiplier product, until the subdominant terms can no longer
/// change its sign.
fn tail_wronskian(fb: &TailBasis, cf: [f64; 2], hb: &TailBasis, ch: [f64; 2], sign: f64) -> Vec<f64> {
    struct Term {
        coef: f64,
        rate: f64,
        w: Vec<f64>,
    }
    let mut terms = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            let coef = sign * cf[i] * ch[j];
            if coef == 0.0 {
                continue;
            }
            let w = (0..TAIL_SAMPLES)
                .map(|k| {
                    let f = fb.phi[k].apply(fb.vecs[i]);
                    let h = hb.phi[k].apply(hb.vecs[j]);
                    f[0] * h[1] - f[1] * h[0]
                })
                .collect();
            terms.push(Term { coef, rate: libm::log(abs(fb.rho[i] * hb.rho[j])), w });
        }
    }
    let Some(rmax) = terms.iter().map(|t| t.rate).reduce(f64::max) else {
        return Vec::new();
    };
    let floor = terms
        .iter()
        .filter(|t| t.rate == rmax)
        .map(|t| t.w.iter().fold(f64::INFINITY, |m, v| m.min(abs(t.coef * v))))
        .fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for n in 0..TAIL_MAX_PERIODS {
        let scales: Vec<f64> = terms.iter().map(|t| exp(n as f64 * (t.rate - rmax))).collect();
        for k in 0..TAIL_SAMPLES {
            out.push(terms.iter().zip(&scales).map(|(t, s)| t.coef * s * t.w[k]).sum());
        }
        let rest: f64 = terms
            .iter()
            .zip(&scales)
            .filter(|(t, _)| t.rate < rmax)
            .map(|(t, s)| abs(t.coef) * s * t.w.iter().fold(0.0, |m: f64, v| m.max(abs(*v))))
            .sum();
        if rest < 0.5 * floor {
            break;
        }
    }
    out
}

/// Eigenvalues of the full-line problem in a gap: zeros of
/// `λ' ↦ W(u₋, u₊)(a)`, cross-checked by an oscillation count, the oracle on
/// `[a - L, a + L]` and the two Dirichlet half-line counts.
pub fn gap_eigenvalues_fullline<E: Executor>(line: &FullLine, gap: (f64, f64), opts: &GapOptions, exec: &E) -> Result<FullLineReport> {
    check_gap(line.right(), gap)?;
    let interval = opts.analysed_interval(gap);
    let lambdas = sample_points(interval, opts.samples);
    let vopts = opts.volterra;
    // Align the two factors independently along the scan.
    let mut left_pts = Vec::with_capacity(lambdas.len());
    let mut right_pts = Vec::with_capacity(lambdas.len());
    let both = exec.map(&lambdas, |l| -> Result<([f64; 2], [f64; 2])> {
        Ok((left_data(line, l, &vopts)?, decaying_data(line.right(), l, &vopts)?))
    });
    for (l, r) in lambdas.iter().zip(both) {
        let (yl, yr) = r?;
        left_pts.push((*l, yl));
        right_pts.push((*l, yr));
    }
    let eigenvalues = full_line_zeros(line, &mut left_pts, &mut right_pts, &vopts, opts.tol)?;
    let scan: Vec<(f64, f64)> = left_pts
        .iter()
        .zip(right_pts.iter())
        .map(|((l, a), (_, b))| (*l, a[0] * b[1] - a[1] * b[0]))
        .collect();

    let count_wronskian = full_line_wronskian(line, interval.0, interval.1, &vopts)?;
    let (length, n) = oracle_size(line.right().base(), interval, opts)?;
    let o = oracle::oracle_gap_eigenvalues(OracleProblem::FullLine(line), interval, length, n)?;

    let half = GapOptions { ..*opts };
    let left = gap_eigenvalues_halfline(line.left(), BoundaryCondition::dirichlet(), gap, &half, exec)?;
    let right = gap_eigenvalues_halfline(line.right(), BoundaryCondition::dirichlet(), gap, &half, exec)?;

    let mut report = GapEigenvalueReport {
        gap,
        interval,
        count_shooting: eigenvalues.len(),
        eigenvalues,
        count_wronskian: Some(count_wronskian),
        count_oracle: Some(o.count()),
        agreement: true,
        scan,
        wronskian: None,
        oracle: Some(o),
    };
    report.settle();
    let full = report.count_shooting as i64;
    let sum = (left.count_shooting + right.count_shooting) as i64;
    Ok(FullLineReport {
        report,
        count_left: left.count_shooting,
        count_right: right.count_shooting,
        coupling_bound_holds: (full - sum).abs() <= 2,
    })
}

fn full_line_zeros(
    line: &FullLine,
    left: &mut Vec<(f64, [f64; 2])>,
    right: &mut Vec<(f64, [f64; 2])>,
    vopts: &VolterraOptions,
    tol: f64,
) -> Result<Vec<f64>> {
    // Each factor is defined up to sign; densify until both turn slowly,
    // then align both and look for sign changes of their Wronskian.
    let mut i = 0;
    let mut inserted = 0;
    while i + 1 < left.len() {
        let bad = cos_between(left[i].1, left[i + 1].1) < 0.7 || cos_between(right[i].1, right[i + 1].1) < 0.7;
        if bad && left[i + 1].0 - left[i].0 > tol && inserted < 4096 {
            let m = 0.5 * (left[i].0 + left[i + 1].0);
            left.insert(i + 1, (m, left_data(line, m, vopts)?));
            right.insert(i + 1, (m, decaying_data(line.right(), m, vopts)?));
            inserted += 1;
        } else {
            i += 1;
        }
    }
    for i in 1..left.len() {
        left[i].1 = aligned(left[i - 1].1, left[i].1);
        right[i].1 = aligned(right[i - 1].1, right[i].1);
    }
    let wr = |l: [f64; 2], r: [f64; 2]| l[0] * r[1] - l[1] * r[0];
    let mut roots = Vec::new();
    for i in 0..left.len() - 1 {
        let f0 = wr(left[i].1, right[i].1);
        let f1 = wr(left[i + 1].1, right[i + 1].1);
        if f0 == 0.0 {
            roots.push(left[i].0);
            continue;
        }
        if f0 * f1 < 0.0 {
            let (mut lo, mut hi) = (left[i].0, left[i + 1].0);
            let (mut yl, mut yr) = (left[i].1, right[i].1);
            let mut flo = f0;
            while hi - lo > tol {
                let m = 0.5 * (lo + hi);
                let ml = aligned(yl, left_data(line, m, vopts)?);
                let mr = aligned(yr, decaying_data(line.right(), m, vopts)?);
                let f = wr(ml, mr);
                if f == 0.0 {
                    lo = m;
                    hi = m;
                    break;
                }
                if (f > 0.0) == (flo > 0.0) {
                    lo = m;
                    yl = ml;
                    yr = mr;
                    flo = f;
                } else {
                    hi = m;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    Ok(roots)
}

/// `Sg` on the grid of the decaying solution.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenResult {
    pub lambda: f64,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    /// `p₁ (Sg)'`.
    pub flux: Vec<f64>,
    /// `W(u₁, v)` with `v` the solution carrying the boundary condition.
    pub wronskian: f64,
    /// `sup |(τ₁ - λ) Sg - g| / sup |g|` over stencil nodes.
    pub residual_sup: f64,
    pub truncation: f64,
    /// Estimated error of `Sg` from the cut at `X`, relative to `sup |g|`.
    pub tail_estimate: f64,
}

/// `(Sg)(x) = (u₁(x) ∫_a^x v g r₁ + v(x) ∫_x^∞ u₁ g r₁) / W(u₁, v)`.
///
/// Without a boundary condition `v = v₁` from the perturbed construction,
/// which fixes the realization; with one, `v` is the solution satisfying
/// it. Integrals past the truncation point are neglected.
pub fn greens_apply<G: Fn(f64) -> f64>(
    pair: &PerturbedPair,
    lambda: f64,
    g: G,
    bc: Option<BoundaryCondition>,
    opts: &VolterraOptions,
) -> Result<GreenResult> {
    let mut setup = VolterraSetup::new(pair, lambda, opts)?;
    if setup.structure() != Structure::Hyperbolic {
        return Err(Error::Precondition(format!("λ = {lambda} is not inside a gap")));
    }
    let a = pair.a();
    let omega = pair.period();
    loop {
        let r = green_on(&setup, pair, lambda, &g, bc)?;
        let periods = setup.grid.periods();
        let done = opts.truncation.is_some() || r.tail_estimate <= GREEN_TAIL_TOL || periods >= opts.max_periods;
        if done {
            return Ok(r);
        }
        let more = (2 * periods).min(opts.max_periods);
        let vopts = VolterraOptions { truncation: Some(a + more as f64 * omega), ..*opts };
        setup = VolterraSetup::new(pair, lambda, &vopts)?;
    }
}

/// Target for the estimated error of `Sg` from cutting `∫_x^∞ u₁ g r₁` at
/// `X`, relative to `sup |g|`.
pub const GREEN_TAIL_TOL: f64 = 1e-11;

fn green_on<G: Fn(f64) -> f64>(
    setup: &VolterraSetup,
    pair: &PerturbedPair,
    lambda: f64,
    g: &G,
    bc: Option<BoundaryCondition>,
) -> Result<GreenResult> {
    let opts = &setup.options;
    let grid = &setup.grid;
    let xs = grid.xs();
    let (u1, v1) = perturb::build_solution_pair(setup)?;
    let u: Vec<[f64; 2]> = u1.states.iter().map(|s| [s[0].re, s[1].re]).collect();
    let v: Vec<[f64; 2]> = match bc {
        None => v1.states.iter().map(|s| [s[0].re, s[1].re]).collect(),
        Some(bc) => quadode::states_at(pair.pert(), lambda, pair.a(), bc.data(), &xs, opts.tol)?,
    };
    let w = u[0][0] * v[0][1] - u[0][1] * v[0][0];
    if abs(w) <= perturb::INDEPENDENCE_THRESHOLD {
        return Err(Error::DependentSolutions(abs(w)));
    }
    let pert = pair.pert();
    let n = xs.len();
    let mut gr = Vec::with_capacity(n);
    let mut gvals = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid.eval_point(i);
        let gi = g(x);
        gvals.push(gi);
        gr.push(gi * pert.eval(x).r);
    }
    let fv: Vec<f64> = (0..n).map(|i| v[i][0] * gr[i]).collect();
    let fu: Vec<f64> = (0..n).map(|i| u[i][0] * gr[i]).collect();
    let iv = grid.cumulative_from_start(&fv);
    let iu = grid.cumulative_from_end(&fu);
    let values: Vec<f64> = (0..n).map(|i| (u[i][0] * iv[i] + v[i][0] * iu[i]) / w).collect();
    let flux: Vec<f64> = (0..n).map(|i| (u[i][1] * iv[i] + v[i][1] * iu[i]) / w).collect();

    let gmax = gvals.iter().fold(0.0f64, |m, v| m.max(abs(*v)));
    // The neglected tail is estimated by the last period's contribution.
    let start = grid.cell_start(grid.periods() - 1);
    let abs_fu: Vec<f64> = fu.iter().map(|f| abs(*f)).collect();
    let last = grid.cumulative_from_end(&abs_fu)[start];
    let vmax = v.iter().fold(0.0f64, |m, y| m.max(abs(y[0])));
    let tail_estimate = if gmax > 0.0 { last * vmax / abs(w) / gmax } else { 0.0 };
    let mut residual: f64 = 0.0;
    if gmax > 0.0 {
        for (i, h) in perturb::stencil_nodes(grid) {
            let t = pert.eval(grid.eval_point(i));
            let d_val = perturb::central_difference(&values, i, h);
            let d_flux = perturb::central_difference(&flux, i, h);
            let r_val = abs(d_val - t.inv_p * flux[i]);
            let r_eq = abs((-d_flux + (t.q - lambda * t.r) * values[i]) / t.r - gvals[i]);
            residual = residual.max(r_val.max(r_eq) / gmax);
        }
    }
    Ok(GreenResult {
        lambda,
        xs,
        values,
        flux,
        wronskian: w,
        residual_sup: residual,
        truncation: setup.truncation,
        tail_estimate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeVerdictKind {
    NoL2Solution,
    Inconclusive,
}

impl EdgeVerdictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeVerdictKind::NoL2Solution => "no_L2_solution",
            EdgeVerdictKind::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTestVerdict {
    pub lambda_edge: f64,
    /// Angles `θ` of the sampled combinations `cos θ · u₁ + sin θ · v₁`.
    pub angles: Vec<f64>,
    /// Cell integrals `∫ |w₁|² r₁` over periods `0..n_max`, one row per angle.
    pub cell_integrals: Vec<Vec<f64>>,
    /// Cell bound of the base combinations (minimum over angles and cells).
    pub lower_bound_e: f64,
    /// First period from which every sampled combination stays above half
    /// its base bound.
    pub n0: Option<usize>,
    pub verdict: EdgeVerdictKind,
    pub reason: Option<String>,
}

/// Combinations sampled on the half circle.
pub const EDGE_ANGLES: usize = 16;

/// Test a band edge for an eigenvalue: every solution's cell integrals must
/// stay bounded below, so none is square integrable.
pub fn edge_eigenvalue_test(pair: &PerturbedPair, lambda_edge: f64, n_max: usize, opts: &VolterraOptions) -> Result<EdgeTestVerdict> {
    let mono = floquet::monodromy(pair.base(), lambda_edge, opts.tol)?;
    if !mono.structure.is_parabolic() {
        return Err(Error::Precondition(format!("λ = {lambda_edge} is not a band edge (D = {})", mono.d)));
    }
    if n_max < 2 {
        return Err(Error::InvalidParameter(format!("n_max = {n_max} leaves no cells to test")));
    }
    let angles: Vec<f64> = (0..EDGE_ANGLES).map(|j| PI * j as f64 / EDGE_ANGLES as f64).collect();
    if pair.moment_class() < 2 && mono.structure == Structure::ParabolicJordan {
        return Ok(EdgeTestVerdict {
            lambda_edge,
            angles,
            cell_integrals: Vec::new(),
            lower_bound_e: 0.0,
            n0: None,
            verdict: EdgeVerdictKind::Inconclusive,
            reason: Some(format!("moment class {} < 2; the second solution is not controlled", pair.moment_class())),
        });
    }
    let a = pair.a();
    let omega = pair.period();
    let vopts = VolterraOptions { truncation: Some(a + n_max as f64 * omega), ..*opts };
    let setup = VolterraSetup::new(pair, lambda_edge, &vopts)?;
    let (u1, v1) = perturb::build_solution_pair(&setup)?;
    let grid = &setup.grid;
    let pert = pair.pert();
    let r1: Vec<f64> = (0..grid.len()).map(|i| pert.eval(grid.eval_point(i)).r).collect();
    let fl = &setup.floquet;
    let mut rows = Vec::with_capacity(angles.len());
    let mut bounds = Vec::with_capacity(angles.len());
    for &t in &angles {
        let (c, s) = (cos(t), sin(t));
        let f: Vec<f64> = (0..grid.len())
            .map(|i| {
                let w = u1.states[i][0] * c + v1.states[i][0] * s;
                w.norm_sqr() * r1[i]
            })
            .collect();
        rows.push(grid.cell_integrals(&f));
        let y0 = [fl.u0[0] * c + fl.v0[0] * s, fl.u0[1] * c + fl.v0[1] * s];
        bounds.push(floquet::cell_energy(pair.base(), &y0, lambda_edge, n_max, opts.tol)?.e);
    }
    let lower_bound_e = bounds.iter().cloned().fold(f64::INFINITY, f64::min);
    // First n such that all cells from n on exceed E/2 for every angle.
    let mut n0 = 0;
    for (row, e) in rows.iter().zip(bounds.iter()) {
        for (n, cell) in row.iter().enumerate() {
            if *cell < 0.5 * e {
                n0 = n0.max(n + 1);
            }
        }
    }
    let cells = rows.first().map_or(0, |r| r.len());
    let stabilized = n0 <= n_max / 2 && n0 < cells;
    Ok(EdgeTestVerdict {
        lambda_edge,
        angles,
        cell_integrals: rows,
        lower_bound_e,
        n0: if n0 < cells { Some(n0) } else { None },
        verdict: if stabilized { EdgeVerdictKind::NoL2Solution } else { EdgeVerdictKind::Inconclusive },
        reason: if stabilized { None } else { Some(format!("cell bound reached only from n = {n0}; n_max = {n_max}")) },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubordinacyReport {
    pub lambda: f64,
    pub x_list: Vec<f64>,
    /// `∫_a^X |u|² r₁ / ∫_a^X |v|² r₁` for the real and imaginary parts of
    /// the Floquet-type solution.
    pub ratios: Vec<f64>,
    pub cells_u: Vec<f64>,
    pub cells_v: Vec<f64>,
    /// Half the smallest and twice the largest base cell integral.
    pub e1: f64,
    pub e2: f64,
    /// First period from which every cell of both solutions lies in
    /// `[e1, e2]`.
    pub bounds_from: Option<usize>,
}

/// Mass ratio of two independent real solutions at a band-interior point.
pub fn subordinacy_diagnostic(pair: &PerturbedPair, lambda: f64, x_list: &[f64], opts: &VolterraOptions) -> Result<SubordinacyReport> {
    let a = pair.a();
    if x_list.is_empty() || x_list.iter().any(|x| !(*x > a)) {
        return Err(Error::InvalidParameter("X list must be non-empty with every X > a".into()));
    }
    let x_max = x_list.iter().cloned().fold(a, f64::max);
    let vopts = VolterraOptions { truncation: Some(x_max), ..*opts };
    let setup = VolterraSetup::new(pair, lambda, &vopts)?;
    // Touching bands leave a diagonalizable parabolic point inside the
    // spectrum; both solutions are bounded there as well.
    let structure = setup.structure();
    if !matches!(structure, Structure::Elliptic | Structure::ParabolicDiagonalizable) {
        return Err(Error::Precondition(format!("λ = {lambda} is not inside a band")));
    }
    // Two real solutions: real and imaginary part of u₁, or u₁ and v₁.
    let (u1, v1) = perturb::build_solution_pair(&setup)?;
    let real: Vec<[f64; 2]> = if structure == Structure::Elliptic {
        u1.states.iter().map(|s| [s[0].re, s[0].im]).collect()
    } else {
        u1.states.iter().zip(v1.states.iter()).map(|(s, t)| [s[0].re, t[0].re]).collect()
    };
    let grid: &Grid = &setup.grid;
    let pert = pair.pert();
    let r1: Vec<f64> = (0..grid.len()).map(|i| pert.eval(grid.eval_point(i)).r).collect();
    let fu: Vec<f64> = (0..grid.len()).map(|i| powi(real[i][0], 2) * r1[i]).collect();
    let fv: Vec<f64> = (0..grid.len()).map(|i| powi(real[i][1], 2) * r1[i]).collect();
    let cu = grid.cumulative_from_start(&fu);
    let cv = grid.cumulative_from_start(&fv);
    let xs = grid.xs();
    let ratios = x_list
        .iter()
        .map(|x| {
            let i = xs.partition_point(|t| *t < *x).min(xs.len() - 1);
            cu[i] / cv[i]
        })
        .collect();
    let cells_u = grid.cell_integrals(&fu);
    let cells_v = grid.cell_integrals(&fv);

    let fl = &setup.floquet;
    let n = grid.periods();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for part in 0..2 {
        let y: CState = match (structure, part) {
            (Structure::Elliptic, 0) => [fl.u0[0].re.into(), fl.u0[1].re.into()],
            (Structure::Elliptic, _) => [fl.u0[0].im.into(), fl.u0[1].im.into()],
            (_, 0) => fl.u0,
            _ => fl.v0,
        };
        let ce = floquet::cell_energy(pair.base(), &y, lambda, n, opts.tol)?;
        lo = lo.min(ce.e);
        hi = hi.max(ce.max);
    }
    let (e1, e2) = (0.5 * lo, 2.0 * hi);
    let mut from = 0;
    for cells in [&cells_u, &cells_v] {
        for (k, c) in cells.iter().enumerate() {
            if *c < e1 || *c > e2 {
                from = from.max(k + 1);
            }
        }
    }
    Ok(SubordinacyReport {
        lambda,
        x_list: x_list.to_vec(),
        ratios,
        cells_u,
        cells_v,
        e1,
        e2,
        bounds_from: if from < n { Some(from) } else { None },
    })
}
