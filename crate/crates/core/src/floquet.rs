//! Floquet data of the periodic base problem: monodromy matrix, Hill
//! discriminant, Floquet exponent, band structure, quasi-periodic solutions
//! and cell energies.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{cnorm, CState, Mat2};
use crate::math::{abs, acos, acosh, PI};
use crate::quadode;

/// Default threshold on `||D| - 2|` below which a point counts as an edge.
pub const DEFAULT_TOL_EDGE: f64 = 1e-9;

/// Relative threshold of the rank test deciding Jordan vs diagonalizable.
pub const JORDAN_THRESHOLD: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// `|D| > 2`: exponential dichotomy, `λ` lies in a gap.
    Hyperbolic,
    /// `|D| < 2`: `λ` lies inside a band.
    Elliptic,
    /// `|D| = 2` and `M = ±I`.
    ParabolicDiagonalizable,
    /// `|D| = 2` with a single eigenvector.
    ParabolicJordan,
}

impl Structure {
    pub fn is_parabolic(self) -> bool {
        matches!(self, Structure::ParabolicDiagonalizable | Structure::ParabolicJordan)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Hyperbolic => "hyperbolic",
            Structure::Elliptic => "elliptic",
            Structure::ParabolicDiagonalizable => "parabolic_diagonalizable",
            Structure::ParabolicJordan => "parabolic_jordan",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonodromyResult {
    pub lambda: f64,
    pub a: f64,
    pub omega: f64,
    pub m: Mat2,
    /// Hill discriminant `tr M`.
    pub d: f64,
    /// Floquet exponent with `Re c ≥ 0`.
    pub c: Complex64,
    /// `(e^{-c}, e^{c})`.
    pub multipliers: [Complex64; 2],
    pub structure: Structure,
}

fn period_of(model: &CoefficientModel) -> Result<f64> {
    model.period().ok_or(Error::NotPeriodic)
}

/// Exponent `c` with `e^c + e^{-c} = D` and `Re c ≥ 0`.
pub fn floquet_exponent(d: f64) -> Complex64 {
    if abs(d) > 2.0 {
        let re = acosh(abs(d) / 2.0);
        Complex64::new(re, if d < -2.0 { PI } else { 0.0 })
    } else {
        Complex64::new(0.0, acos(d / 2.0))
    }
}

/// Classify a monodromy matrix with trace `d`.
pub fn classify(m: &Mat2, d: f64, tol_edge: f64) -> Structure {
    let g = abs(d) - 2.0;
    if g > tol_edge {
        Structure::Hyperbolic
    } else if g < -tol_edge {
        Structure::Elliptic
    } else {
        let n = *m - Mat2::IDENTITY.scale(d / 2.0);
        if n.norm() <= JORDAN_THRESHOLD * m.norm() {
            Structure::ParabolicDiagonalizable
        } else {
            Structure::ParabolicJordan
        }
    }
}

fn assemble(model: &CoefficientModel, lambda: f64, m: Mat2, tol_edge: f64) -> Result<MonodromyResult> {
    let omega = period_of(model)?;
    let d = m.trace();
    let structure = classify(&m, d, tol_edge);
    let c = match structure {
        Structure::ParabolicDiagonalizable | Structure::ParabolicJordan => {
            if d > 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, PI) }
        }
        _ => floquet_exponent(d),
    };
    Ok(MonodromyResult {
        lambda,
        a: model.domain_start(),
        omega,
        m,
        d,
        c,
        multipliers: [(-c).exp(), c.exp()],
        structure,
    })
}

/// Monodromy matrix over `[a, a + ω]` and derived Floquet data.
pub fn monodromy(model: &CoefficientModel, lambda: f64, tol: f64) -> Result<MonodromyResult> {
    monodromy_with_edge(model, lambda, tol, DEFAULT_TOL_EDGE)
}

pub fn monodromy_with_edge(model: &CoefficientModel, lambda: f64, tol: f64, tol_edge: f64) -> Result<MonodromyResult> {
    let omega = period_of(model)?;
    let a = model.domain_start();
    let t = quadode::transfer_matrix(model, lambda, a, a + omega, tol)?;
    assemble(model, lambda, t.entries, tol_edge)
}

pub fn discriminant(model: &CoefficientModel, lambda: f64, tol: f64) -> Result<f64> {
    let omega = period_of(model)?;
    let a = model.domain_start();
    Ok(quadode::transfer_matrix(model, lambda, a, a + omega, tol)?.entries.trace())
}

/// `(D(λ), dD/dλ)`.
pub fn discriminant_with_derivative(model: &CoefficientModel, lambda: f64, tol: f64) -> Result<(f64, f64)> {
    let omega = period_of(model)?;
    let a = model.domain_start();
    let (m, dm) = quadode::transfer_matrix_with_derivative(model, lambda, a, a + omega, tol)?;
    Ok((m.trace(), dm.trace()))
}

/// `D(λ)` over an ascending grid.
pub fn discriminant_sweep(model: &CoefficientModel, lambdas: &[f64], tol: f64) -> Result<Vec<(f64, f64)>> {
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("lambda grid must be strictly ascending".into()));
    }
    lambdas.iter().map(|&l| discriminant(model, l, tol).map(|d| (l, d))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandOptions {
    /// Scan points per unit of `λ`.
    pub scan_resolution: f64,
    pub tol_edge: f64,
    /// Integrator tolerance.
    pub tol: f64,
}

impl Default for BandOptions {
    fn default() -> Self {
        BandOptions { scan_resolution: 400.0, tol_edge: DEFAULT_TOL_EDGE, tol: 1e-11 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// `|D|` crosses 2.
    Simple,
    /// `|D|` touches 2 from below: two bands meet, the gap is closed.
    Touching,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub lambda: f64,
    pub kind: EdgeKind,
    /// `D = +2` (periodic) or `D = -2` (semi-periodic).
    pub periodic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandStructure {
    pub range: (f64, f64),
    /// Edge values in ascending order; touching edges appear twice.
    pub edges: Vec<f64>,
    pub edge_details: Vec<Edge>,
    pub bands: Vec<[f64; 2]>,
    /// `touching[i]`: bands `i` and `i + 1` meet at a closed gap.
    pub touching: Vec<bool>,
    /// First band starts at the range start / last band runs past the end.
    pub truncated: [bool; 2],
    pub caveats: Vec<String>,
}

impl BandStructure {
    /// Open gaps bounded by two band edges.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.bands.len().saturating_sub(1) {
            if !self.touching[i] {
                out.push((self.bands[i][1], self.bands[i + 1][0]));
            }
        }
        out
    }

    /// Whether `λ` lies in a band (edges included).
    pub fn in_band(&self, lambda: f64) -> bool {
        self.bands.iter().any(|b| lambda >= b[0] && lambda <= b[1])
    }

    /// Lowest edge, i.e. the bottom of the essential spectrum, if the
    /// scan started below it.
    pub fn bottom(&self) -> Option<f64> {
        if self.truncated[0] { None } else { self.bands.first().map(|b| b[0]) }
    }
}

fn bisect<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, f_lo: f64, tol_value: f64) -> Result<f64> {
    let mut s_lo = f_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) || hi - lo <= 1e-14 * (1.0 + abs(mid)) {
            break;
        }
        let v = f(mid)?;
        if abs(v) <= tol_value {
            return Ok(mid);
        }
        if (v < 0.0) == (s_lo < 0.0) {
            lo = mid;
            s_lo = v;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Band structure from a fresh scan of `D` over `[λ_min, λ_max]`.
pub fn band_structure(model: &CoefficientModel, lambda_min: f64, lambda_max: f64, opts: &BandOptions) -> Result<BandStructure> {
    let lambdas = scan_grid(lambda_min, lambda_max, opts)?;
    let samples = discriminant_sweep(model, &lambdas, opts.tol)?;
    band_structure_from_samples(model, &samples, opts)
}

/// Scan points used by [`band_structure`].
pub fn scan_grid(lambda_min: f64, lambda_max: f64, opts: &BandOptions) -> Result<Vec<f64>> {
    if !(lambda_min < lambda_max) || !lambda_min.is_finite() || !lambda_max.is_finite() {
        return Err(Error::InvalidParameter(format!("empty range [{lambda_min}, {lambda_max}]")));
    }
    if !(opts.scan_resolution > 0.0) || !(opts.tol_edge > 0.0) {
        return Err(Error::InvalidParameter("scan resolution and tol_edge must be positive".into()));
    }
    let n = libm::ceil((lambda_max - lambda_min) * opts.scan_resolution).max(4.0) as usize;
    let step = (lambda_max - lambda_min) / n as f64;
    Ok((0..=n).map(|i| if i == n { lambda_max } else { lambda_min + i as f64 * step }).collect())
}

/// Band structure from precomputed `(λ, D(λ))` samples (ascending), refined
/// with further evaluations of `D` near edges.
pub fn band_structure_from_samples(model: &CoefficientModel, samples: &[(f64, f64)], opts: &BandOptions) -> Result<BandStructure> {
    period_of(model)?;
    if samples.len() < 3 {
        return Err(Error::InvalidParameter("at least three scan samples are needed".into()));
    }
    let tol = opts.tol;
    let tol_edge = opts.tol_edge;
    let d_at = |l: f64| discriminant(model, l, tol);
    let mut edges: Vec<Edge> = Vec::new();
    let mut caveats = Vec::new();
    let step = (samples[samples.len() - 1].0 - samples[0].0) / (samples.len() - 1) as f64;
    if step > 0.05 {
        caveats.push(format!(
            "scan step {step:.3e} is coarse; bands or gaps narrower than the step may be missed"
        ));
    }

    // Simple crossings of D = ±2 between neighbouring samples.
    for w in samples.windows(2) {
        let (l0, d0) = w[0];
        let (l1, d1) = w[1];
        for level in [2.0, -2.0] {
            let h0 = d0 - level;
            let h1 = d1 - level;
            if h0 == 0.0 {
                continue;
            }
            if h0 * h1 < 0.0 || h1 == 0.0 {
                let root = if h1 == 0.0 {
                    l1
                } else {
                    bisect(|l| d_at(l).map(|d| d - level), l0, l1, h0, 1e-3 * tol_edge)?
                };
                edges.push(Edge { lambda: root, kind: EdgeKind::Simple, periodic: level > 0.0 });
            }
        }
    }

    // Extrema of D close to ±2: touching edges and features between samples.
    for i in 1..samples.len() - 1 {
        let (lp, dp) = samples[i - 1];
        let (lc, dc) = samples[i];
        let (ln, dn) = samples[i + 1];
        let is_max = dc > dp && dc >= dn;
        let is_min = dc < dp && dc <= dn;
        if !is_max && !is_min {
            continue;
        }
        for level in [2.0, -2.0] {
            if abs(dc - level) > 0.05 {
                continue;
            }
            // Extremum location from dD/dλ = 0.
            let dd = |l: f64| discriminant_with_derivative(model, l, tol).map(|v| v.1);
            let s_lo = dd(lp)?;
            let s_hi = dd(ln)?;
            let l_star = if s_lo * s_hi < 0.0 { bisect(dd, lp, ln, s_lo, 0.0)? } else { lc };
            let d_star = d_at(l_star)?;
            let excess = d_star - level;
            let closed = if is_max { level > 0.0 } else { level < 0.0 };
            let existing: Vec<usize> = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.lambda >= lp && e.lambda <= ln && e.periodic == (level > 0.0))
                .map(|(j, _)| j)
                .collect();
            if closed && abs(excess) <= 10.0 * tol_edge {
                // |D| touches 2 from inside the band: a closed gap.
                for j in existing.into_iter().rev() {
                    edges.remove(j);
                }
                edges.push(Edge { lambda: l_star, kind: EdgeKind::Touching, periodic: level > 0.0 });
                continue;
            }
            // A hidden pair of crossings: both neighbours lie on the other
            // side of the level than the extremum.
            let (hp, hn) = (dp - level, dn - level);
            let feature = abs(excess) > 10.0 * tol_edge && hp * excess < 0.0 && hn * excess < 0.0;
            if feature && existing.is_empty() {
                // Two crossings around the extremum; add those the scan missed.
                let h_star = d_star - level;
                let left = bisect(|l| d_at(l).map(|d| d - level), lp, l_star, dp - level, 1e-3 * tol_edge);
                let right = bisect(|l| d_at(l).map(|d| d - level), l_star, ln, h_star, 1e-3 * tol_edge);
                let (left, right) = (left?, right?);
                for j in existing.into_iter().rev() {
                    edges.remove(j);
                }
                edges.push(Edge { lambda: left, kind: EdgeKind::Simple, periodic: level > 0.0 });
                edges.push(Edge { lambda: right, kind: EdgeKind::Simple, periodic: level > 0.0 });
                caveats.push(format!(
                    "narrow {} near λ ≈ {l_star:.9} found between scan samples",
                    if closed { "gap" } else { "band" }
                ));
            }
        }
    }
    edges.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());

    let (l_first, d_first) = samples[0];
    let l_last = samples[samples.len() - 1].0;
    let mut inside = abs(d_first) <= 2.0;
    let truncated_low = inside;
    let mut start = l_first;
    let mut bands: Vec<[f64; 2]> = Vec::new();
    let mut touching: Vec<bool> = Vec::new();
    let mut pending_touch = false;
    let mut flat = Vec::new();
    for e in &edges {
        match e.kind {
            EdgeKind::Simple => {
                flat.push(e.lambda);
                if inside {
                    bands.push([start, e.lambda]);
                    if bands.len() > 1 {
                        touching.push(pending_touch);
                    }
                    pending_touch = false;
                    inside = false;
                } else {
                    start = e.lambda;
                    inside = true;
                }
            }
            EdgeKind::Touching => {
                flat.push(e.lambda);
                flat.push(e.lambda);
                if inside {
                    bands.push([start, e.lambda]);
                    if bands.len() > 1 {
                        touching.push(pending_touch);
                    }
                    pending_touch = true;
                    start = e.lambda;
                } else {
                    caveats.push(format!("isolated touching point at λ ≈ {:.9} outside any band", e.lambda));
                }
            }
        }
    }
    let truncated_high = inside;
    if inside {
        bands.push([start, l_last]);
        if bands.len() > 1 {
            touching.push(pending_touch);
        }
    }
    Ok(BandStructure {
        range: (l_first, l_last),
        edges: flat,
        edge_details: edges,
        bands,
        touching,
        truncated: [truncated_low, truncated_high],
        caveats,
    })
}

/// Fundamental matrices `Φ̂(a + s)` of the first period at offsets `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodSamples {
    pub residues: Vec<f64>,
    pub phi: Vec<Mat2>,
}

pub fn sample_period(model: &CoefficientModel, lambda: f64, residues: &[f64], tol: f64) -> Result<PeriodSamples> {
    let a = model.domain_start();
    let xs: Vec<f64> = residues.iter().map(|s| a + s).collect();
    let phi = quadode::transfer_matrices_at(model, lambda, a, &xs, tol)?;
    Ok(PeriodSamples { residues: residues.to_vec(), phi })
}

/// Quasi-periodic solutions `u₀, v₀` of the base problem at `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloquetSolutionPair {
    pub monodromy: MonodromyResult,
    /// Initial data of `u₀` at `a`; multiplier `e^{-c}`.
    pub u0: CState,
    /// Initial data of `v₀` at `a`; multiplier `e^{c}`, or the Jordan
    /// partner with `M v₀ = s v₀ + u₀`.
    pub v0: CState,
    pub c: Complex64,
    pub jordan: bool,
    /// `C` with `‖V₀(x)‖ ≤ C (1 + (x-a)/ω)` in the Jordan case.
    pub growth_constant: Option<f64>,
    /// `||D| - 2|` is within ten times the edge tolerance but the point was
    /// not classified as an edge; eigenvectors are ill-conditioned.
    pub near_degenerate: bool,
    /// `W(u₀, v₀)`, constant in `x`.
    pub wronskian: Complex64,
    /// Samples of the fundamental matrix over the first period.
    pub samples: PeriodSamples,
}

fn eigenvector(m: &Mat2, s: Complex64) -> CState {
    let [[m11, m12], [m21, m22]] = m.0;
    let c1 = [Complex64::new(m12, 0.0), s - m11];
    let c2 = [s - m22, Complex64::new(m21, 0.0)];
    let v = if cnorm(&c1) >= cnorm(&c2) { c1 } else { c2 };
    normalize(v)
}

fn normalize(v: CState) -> CState {
    let n = cnorm(&v);
    let big = if v[0].norm() >= v[1].norm() { v[0] } else { v[1] };
    // Unit norm with the larger component real and positive.
    let phase = big.conj() / big.norm();
    [v[0] * phase / n, v[1] * phase / n]
}

const GROWTH_SAMPLES: usize = 512;

/// Floquet solutions at `λ`; periodic parts sampled at `GROWTH_SAMPLES`
/// points of the first period.
pub fn floquet_solutions(model: &CoefficientModel, lambda: f64, tol: f64) -> Result<FloquetSolutionPair> {
    floquet_solutions_with(model, lambda, tol, DEFAULT_TOL_EDGE)
}

pub fn floquet_solutions_with(model: &CoefficientModel, lambda: f64, tol: f64, tol_edge: f64) -> Result<FloquetSolutionPair> {
    let omega = period_of(model)?;
    let residues: Vec<f64> = (0..=GROWTH_SAMPLES).map(|j| j as f64 * omega / GROWTH_SAMPLES as f64).collect();
    let samples = sample_period(model, lambda, &residues, tol)?;
    let m = samples.phi[GROWTH_SAMPLES];
    let mono = assemble(model, lambda, m, tol_edge)?;
    let g = abs(mono.d) - 2.0;
    let near_degenerate = !mono.structure.is_parabolic() && abs(g) <= 10.0 * tol_edge;
    let (u0, v0, jordan) = match mono.structure {
        Structure::Hyperbolic => {
            let u = eigenvector(&m, mono.multipliers[0]);
            let v = eigenvector(&m, mono.multipliers[1]);
            // Real data for real multipliers.
            ([u[0].re.into(), u[1].re.into()], [v[0].re.into(), v[1].re.into()], false)
        }
        Structure::Elliptic => {
            let u = eigenvector(&m, mono.multipliers[0]);
            (u, [u[0].conj(), u[1].conj()], false)
        }
        Structure::ParabolicDiagonalizable => {
            let one = Complex64::new(1.0, 0.0);
            let zero = Complex64::new(0.0, 0.0);
            ([one, zero], [zero, one], false)
        }
        Structure::ParabolicJordan => {
            let s = if mono.d > 0.0 { 1.0 } else { -1.0 };
            let n = m - Mat2::IDENTITY.scale(s);
            let ev = eigenvector(&m, Complex64::new(s, 0.0));
            let u = [ev[0].re, ev[1].re];
            // N = u ηᵀ; read η off the row where u is largest.
            let i = if abs(u[0]) >= abs(u[1]) { 0 } else { 1 };
            let eta = [n.0[i][0] / u[i], n.0[i][1] / u[i]];
            let e2 = eta[0] * eta[0] + eta[1] * eta[1];
            let v = [eta[0] / e2, eta[1] / e2];
            ([u[0].into(), u[1].into()], [v[0].into(), v[1].into()], true)
        }
    };
    let wronskian = u0[0] * v0[1] - u0[1] * v0[0];
    let growth_constant = if jordan {
        let mut sup: f64 = 0.0;
        for phi in &samples.phi {
            let a = cnorm(&phi.apply_c(u0));
            let b = cnorm(&phi.apply_c(v0));
            sup = sup.max(a + b);
        }
        // Margin for the sup taken over finitely many samples.
        Some(1.01 * sup)
    } else {
        None
    };
    Ok(FloquetSolutionPair {
        c: mono.c,
        monodromy: mono,
        u0,
        v0,
        jordan,
        growth_constant,
        near_degenerate,
        wronskian,
        samples,
    })
}

impl FloquetSolutionPair {
    pub fn lambda(&self) -> f64 {
        self.monodromy.lambda
    }

    pub fn structure(&self) -> Structure {
        self.monodromy.structure
    }

    fn multiplier_pow(&self, which: usize, n: usize) -> Complex64 {
        // e^{∓nc} computed directly to avoid accumulated rounding.
        let e = self.c * n as f64;
        if which == 0 { (-e).exp() } else { e.exp() }
    }

    /// Coordinates `(α, β)` with `y = α u₀ + β v₀`.
    pub fn coordinates(&self, y: &CState) -> (Complex64, Complex64) {
        let w = self.wronskian;
        let alpha = (y[0] * self.v0[1] - y[1] * self.v0[0]) / w;
        let beta = (self.u0[0] * y[1] - self.u0[1] * y[0]) / w;
        (alpha, beta)
    }

    /// `M^n y`, applied through the eigen (or Jordan) decomposition.
    pub fn power_apply(&self, n: usize, y: &CState) -> CState {
        let (alpha, beta) = self.coordinates(y);
        let mu = self.multiplier_pow(0, n);
        if self.jordan {
            let s = if self.monodromy.d > 0.0 { 1.0 } else { -1.0 };
            let sn = crate::math::powi(s, n as i32);
            let snm1 = if n == 0 { 0.0 } else { n as f64 * crate::math::powi(s, n as i32 - 1) };
            let cu = alpha * sn + beta * snm1;
            let cv = beta * sn;
            return [self.u0[0] * cu + self.v0[0] * cv, self.u0[1] * cu + self.v0[1] * cv];
        }
        let nu = self.multiplier_pow(1, n);
        let cu = alpha * mu;
        let cv = beta * nu;
        [self.u0[0] * cu + self.v0[0] * cv, self.u0[1] * cu + self.v0[1] * cv]
    }

    /// States of the solution with initial data `y` at `a` on every grid
    /// node. `samples` must hold the fundamental matrix at `grid.residues()`.
    pub fn states_on_grid(&self, grid: &Grid, samples: &PeriodSamples, y: &CState) -> Vec<CState> {
        let mut per_period: Vec<CState> = Vec::new();
        grid.nodes()
            .iter()
            .map(|node| {
                while per_period.len() <= node.period {
                    per_period.push(self.power_apply(per_period.len(), y));
                }
                samples.phi[node.residue].apply_c(per_period[node.period])
            })
            .collect()
    }

    /// State at an arbitrary `x ≥ a` of the solution with initial data `y`.
    pub fn state_at(&self, model: &CoefficientModel, x: f64, y: &CState, tol: f64) -> Result<CState> {
        let a = self.monodromy.a;
        let omega = self.monodromy.omega;
        let n = libm::floor((x - a) / omega).max(0.0) as usize;
        let s = x - a - n as f64 * omega;
        let phi = quadode::transfer_matrix(model, self.lambda(), a, a + s, tol)?.entries;
        Ok(phi.apply_c(self.power_apply(n, y)))
    }
}

/// Flip `v` so that `Re ⟨reference, v⟩ ≥ 0`.
pub fn align_sign(reference: &CState, v: CState) -> CState {
    let dot = reference[0].conj() * v[0] + reference[1].conj() * v[1];
    if dot.re < 0.0 { [-v[0], -v[1]] } else { v }
}

/// Gram matrix `G = ∫_a^{a+ω} Φᵀ diag(r, 0) Φ` of the first period,
/// together with the monodromy matrix.
pub fn period_gram(model: &CoefficientModel, lambda: f64, tol: f64) -> Result<(Mat2, Mat2)> {
    let omega = period_of(model)?;
    let a = model.domain_start();
    let (m, g) = quadode::transfer_matrix_with_gram(model, lambda, a, a + omega, tol)?;
    Ok((m, Mat2::new(g[0], g[1], g[1], g[2])))
}

/// `y^H G y` for a real symmetric `G`.
pub fn gram_form(g: &Mat2, y: &CState) -> f64 {
    let gy = g.apply_c(*y);
    (y[0].conj() * gy[0] + y[1].conj() * gy[1]).re
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellEnergy {
    /// `∫ |u|² r` over `[a + nω, a + (n+1)ω]` for `n = 0..=n_max`.
    pub cells: Vec<f64>,
    /// Minimum over the cells.
    pub e: f64,
    pub max: f64,
}

/// Cell integrals of `|u|² r` for the base solution with initial data `y`.
pub fn cell_energy(model: &CoefficientModel, y: &CState, lambda: f64, n_max: usize, tol: f64) -> Result<CellEnergy> {
    let (m, g) = period_gram(model, lambda, tol)?;
    let d = m.trace();
    if abs(d) - 2.0 > DEFAULT_TOL_EDGE {
        return Err(Error::Precondition(format!(
            "λ = {lambda} lies in a gap (|D| = {:.6}); cell energy needs |D| ≤ 2",
            abs(d)
        )));
    }
    let mut cells = Vec::with_capacity(n_max + 1);
    let mut state = *y;
    for _ in 0..=n_max {
        cells.push(gram_form(&g, &state));
        state = m.apply_c(state);
    }
    let e = cells.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = cells.iter().cloned().fold(0.0, f64::max);
    Ok(CellEnergy { cells, e, max })
}

/// `(1/ω)·|ln|e^{c}||`, the exponential rate per unit length.
pub fn decay_rate(mono: &MonodromyResult) -> f64 {
    mono.c.re / mono.omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::make_builtin;

    fn free() -> CoefficientModel {
        make_builtin("free", &[PI]).unwrap()
    }

    #[test]
    fn free_monodromy_examples() {
        let m = monodromy(&free(), 0.0, 1e-10).unwrap();
        assert!(m.m.max_abs_diff(&Mat2::new(1.0, PI, 0.0, 1.0)) < 1e-9);
        assert_eq!(m.structure, Structure::ParabolicJordan);
        assert_eq!(m.c, Complex64::new(0.0, 0.0));

        let m = monodromy(&free(), 1.0, 1e-10).unwrap();
        assert_eq!(m.structure, Structure::ParabolicDiagonalizable);
        assert!((m.multipliers[1] + 1.0).norm() < 1e-12);

        let m = monodromy(&free(), -1.0, 1e-10).unwrap();
        assert_eq!(m.structure, Structure::Hyperbolic);
        assert!((m.d - 2.0 * PI.cosh()).abs() < 1e-8);
        assert!((m.c.re - PI).abs() < 1e-9 && m.c.im == 0.0);
    }

    #[test]
    fn exponent_branches() {
        let c = floquet_exponent(-3.0);
        assert!((c.im - PI).abs() < 1e-15 && c.re > 0.0);
        assert!(((c.exp() + (-c).exp()).re + 3.0).abs() < 1e-12);
        let c = floquet_exponent(1.0);
        assert!(c.re == 0.0 && (c.im - PI / 3.0).abs() < 1e-15);
    }

    #[test]
    fn free_floquet_solutions() {
        let f = floquet_solutions(&free(), -1.0, 1e-11).unwrap();
        let r = f.u0[1] / f.u0[0];
        assert!((r.re + 1.0).abs() < 1e-9);
        let r = f.v0[1] / f.v0[0];
        assert!((r.re - 1.0).abs() < 1e-9);

        let f = floquet_solutions(&free(), 0.0, 1e-11).unwrap();
        assert!(f.jordan);
        assert!(f.u0[1].norm() < 1e-9 && (f.u0[0].re.abs() - 1.0).abs() < 1e-9);
        assert!(f.v0[0].norm() < 1e-9);
        let c = f.growth_constant.unwrap();
        // V₀(x) = x/π up to the normalization of u₀.
        let m = free();
        for k in 0..10 {
            let x = 0.3 + k as f64 * PI;
            let s = f.state_at(&m, x, &f.v0, 1e-11).unwrap();
            assert!(cnorm(&s) <= c * (1.0 + x / PI));
        }
    }

    #[test]
    fn jordan_power_matches_matrix_power() {
        let f = floquet_solutions(&free(), 0.0, 1e-12).unwrap();
        let y = [Complex64::new(0.3, 0.0), Complex64::new(-1.2, 0.0)];
        let mut direct = y;
        for _ in 0..5 {
            direct = f.monodromy.m.apply_c(direct);
        }
        let viad = f.power_apply(5, &y);
        assert!((direct[0] - viad[0]).norm() < 1e-8 && (direct[1] - viad[1]).norm() < 1e-8);
    }

    #[test]
    fn sweep_closed_form() {
        let s = discriminant_sweep(&free(), &[0.0, 0.5, 1.0, 4.0, 9.0], 1e-11).unwrap();
        let expect = [2.0, 2.0 * (PI * 0.5f64.sqrt()).cos(), -2.0, 2.0, -2.0];
        for ((_, d), e) in s.iter().zip(expect) {
            assert!((d - e).abs() < 1e-8, "{d} vs {e}");
        }
        assert!(discriminant_sweep(&free(), &[1.0, 0.0], 1e-10).is_err());
    }

    #[test]
    fn free_band_structure() {
        let b = band_structure(&free(), -1.0, 10.0, &BandOptions::default()).unwrap();
        let expect = [0.0, 1.0, 1.0, 4.0, 4.0, 9.0, 9.0];
        assert_eq!(b.edges.len(), expect.len(), "{:?}", b.edges);
        for (e, x) in b.edges.iter().zip(expect) {
            assert!((e - x).abs() < 1e-7, "{e} vs {x}");
        }
        assert!(b.touching.iter().all(|t| *t));
        assert!(b.gaps().is_empty());
        assert!(b.truncated[1] && !b.truncated[0]);
    }

    #[test]
    fn cell_energy_of_sine() {
        let y = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        let c = cell_energy(&free(), &y, 1.0, 5, 1e-11).unwrap();
        for v in &c.cells {
            assert!((v - PI / 2.0).abs() < 1e-9);
        }
        assert!(cell_energy(&free(), &y, -1.0, 5, 1e-11).is_err());
    }
}
