//! Brute-force cross-check: three-point finite differences for
//! `-(p u')' + q u = λ r u` on a truncated interval, with eigenvalues
//! counted by Sylvester inertia of the shifted tridiagonal matrix.

use alloc::format;
use alloc::vec::Vec;

use crate::coefficients::{Coefficients, FullLine, PerturbedPair, Triple};
use crate::error::{Error, Result};
use crate::floquet;
use crate::math::{abs, cos, next_below, sin, sqrt};

/// Condition at the left end of the pencil. The right end is always
/// Dirichlet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeftBoundary {
    Dirichlet,
    /// `cos α · u(a) + sin α · (p u')(a) = 0`.
    Alpha(f64),
}

/// Symmetric tridiagonal stiffness matrix with diagonal mass.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalPencil {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
    pub weight_diag: Vec<f64>,
    pub h: f64,
    pub domain: (f64, f64),
    pub bc: LeftBoundary,
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Mean of `1/p` over `[x0, x1]`, split at breakpoints.
fn mean_inv_p<C: Coefficients + ?Sized>(model: &C, x0: f64, x1: f64, bps: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut s = x0;
    let mut cuts = bps.iter().copied().filter(|b| *b > x0 && *b < x1);
    loop {
        let e = cuts.next().unwrap_or(x1);
        let w = e - s;
        for g in GAUSS2 {
            acc += 0.5 * w * model.eval(s + g * w).inv_p;
        }
        if e >= x1 {
            break;
        }
        s = e;
    }
    acc / (x1 - x0)
}

/// Mean of the one-sided limits at a node.
fn node_value<C: Coefficients + ?Sized>(model: &C, x: f64) -> Triple {
    let r = model.eval(x);
    let l = model.eval(next_below(x));
    Triple::new(0.5 * (l.inv_p + r.inv_p), 0.5 * (l.q + r.q), 0.5 * (l.r + r.r))
}

/// Flux-form three-point scheme on `n` uniform intervals of `[lo, hi]`.
///
/// `p` enters through the harmonic cell mean `h / ∫ 1/p`, which is exact
/// for piecewise constant `p` wherever the jump sits. `q` and `r` are taken
/// at nodes (mean of one-sided limits). The α-condition at `lo` uses the
/// half-cell balance, which keeps the matrix symmetric.
pub fn discretize<C: Coefficients + ?Sized>(model: &C, lo: f64, hi: f64, n: usize, bc: LeftBoundary) -> Result<TridiagonalPencil> {
    if n < 16 {
        return Err(Error::InvalidParameter(format!("need at least 16 intervals, got {n}")));
    }
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
    }
    let h = (hi - lo) / n as f64;
    let x = |i: usize| if i == n { hi } else { lo + i as f64 * h };
    let bps = model.breakpoints(lo, hi);
    let p_half: Vec<f64> = (0..n).map(|i| 1.0 / mean_inv_p(model, x(i), x(i + 1), &bps)).collect();
    let h2 = h * h;
    let mut diag = Vec::with_capacity(n);
    let mut offdiag = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    let first = match bc {
        LeftBoundary::Dirichlet => 1,
        LeftBoundary::Alpha(alpha) if abs(sin(alpha)) < 1e-14 => 1,
        LeftBoundary::Alpha(alpha) => {
            let t = node_value(model, lo);
            // Half cell [lo, lo + h/2] with (pu')(lo) = -cot α · u(lo).
            let cot = cos(alpha) / sin(alpha);
            diag.push(p_half[0] / h2 - cot / h + 0.5 * t.q);
            weight.push(0.5 * t.r);
            offdiag.push(-p_half[0] / h2);
            0
        }
    };
    for i in first.max(1)..n {
        let t = node_value(model, x(i));
        diag.push((p_half[i - 1] + p_half[i]) / h2 + t.q);
        weight.push(t.r);
        if i + 1 < n {
            offdiag.push(-p_half[i] / h2);
        }
    }
    for (i, w) in weight.iter().enumerate() {
        if !(*w > 0.0) {
            return Err(Error::NonPositiveCoefficient { name: "r", x: x(i + first), value: *w });
        }
    }
    Ok(TridiagonalPencil { diag, offdiag, weight_diag: weight, h, domain: (lo, hi), bc })
}

/// Result of a Sturm count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SturmCount {
    pub count: usize,
    /// Pivots that vanished exactly and were replaced by a tiny value.
    pub perturbed_pivots: usize,
}

impl TridiagonalPencil {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `W^{-1/2} A W^{-1/2}` as (diagonal, off-diagonal).
    pub fn standard_form(&self) -> (Vec<f64>, Vec<f64>) {
        let s: Vec<f64> = self.weight_diag.iter().map(|w| 1.0 / sqrt(*w)).collect();
        let d = self.diag.iter().zip(s.iter()).map(|(d, s)| d * s * s).collect();
        let e = self.offdiag.iter().enumerate().map(|(i, e)| e * s[i] * s[i + 1]).collect();
        (d, e)
    }

    /// Number of eigenvalues below `lambda`, from the signs of the LDLᵀ
    /// pivots of the shifted standard form.
    pub fn sturm_count_detailed(&self, lambda: f64) -> SturmCount {
        let mut count = 0;
        let mut perturbed = 0;
        let mut prev: f64 = 1.0;
        let mut prev_e2 = 0.0;
        for i in 0..self.len() {
            let w = self.weight_diag[i];
            let mut d = self.diag[i] / w - lambda - prev_e2 / prev;
            if d == 0.0 {
                d = f64::EPSILON * (abs(self.diag[i] / w) + abs(lambda) + 1.0);
                perturbed += 1;
            }
            if d < 0.0 {
                count += 1;
            }
            if i < self.offdiag.len() {
                let e = self.offdiag[i] / sqrt(w * self.weight_diag[i + 1]);
                prev_e2 = e * e;
            }
            prev = d;
        }
        SturmCount { count, perturbed_pivots: perturbed }
    }

    pub fn sturm_count(&self, lambda: f64) -> usize {
        self.sturm_count_detailed(lambda).count
    }

    /// All eigenvalues in `(lo, hi)`, each bisected to `tol`.
    pub fn eigenvalues_in(&self, lo: f64, hi: f64, tol: f64) -> Vec<f64> {
        let c_lo = self.sturm_count(lo);
        let c_hi = self.sturm_count(hi);
        let mut out = Vec::with_capacity(c_hi.saturating_sub(c_lo));
        for k in c_lo..c_hi {
            // eigenvalue number k (0-based): smallest x with count(x) > k
            let (mut a, mut b) = (lo, hi);
            while b - a > tol * (1.0 + abs(a).max(abs(b))) {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if self.sturm_count(m) > k {
                    b = m;
                } else {
                    a = m;
                }
            }
            out.push(0.5 * (a + b));
        }
        out
    }
}

/// Number of pencil eigenvalues below `lambda`.
pub fn sturm_count(pencil: &TridiagonalPencil, lambda: f64) -> usize {
    pencil.sturm_count(lambda)
}

/// Problem seen by the oracle.
#[derive(Clone, Copy, Debug)]
pub enum OracleProblem<'a> {
    /// `[a, a + L]` with the α-condition at `a`.
    HalfLine { pair: &'a PerturbedPair, alpha: f64 },
    /// `[a - L, a + L]`, Dirichlet at both ends.
    FullLine(&'a FullLine),
}

impl OracleProblem<'_> {
    fn base(&self) -> &crate::coefficients::CoefficientModel {
        match self {
            OracleProblem::HalfLine { pair, .. } => pair.base(),
            OracleProblem::FullLine(f) => f.right().base(),
        }
    }

    fn period(&self) -> f64 {
        match self {
            OracleProblem::HalfLine { pair, .. } => pair.period(),
            OracleProblem::FullLine(f) => f.period(),
        }
    }

    /// Pencil on the truncated domain with `n` intervals per unit `L`
    /// (the full line uses `2n` for `2L`).
    pub fn pencil(&self, length: f64, n: usize) -> Result<TridiagonalPencil> {
        match *self {
            OracleProblem::HalfLine { pair, alpha } => {
                discretize(pair.pert(), pair.a(), pair.a() + length, n, LeftBoundary::Alpha(alpha))
            }
            OracleProblem::FullLine(f) => discretize(f, f.a() - length, f.a() + length, 2 * n, LeftBoundary::Dirichlet),
        }
    }
}

/// Truncation length `(periods + 1/3) ω`. Doubling it changes the phase of
/// the far boundary within the period, so boundary states move while
/// genuine eigenvalues stay.
pub fn default_length(omega: f64, periods: usize) -> f64 {
    (periods as f64 + 1.0 / 3.0) * omega
}

/// Shift under `L → 2L` above which an eigenvalue counts as a boundary
/// artifact.
pub const ARTIFACT_SHIFT: f64 = 1e-3;
/// Shift under `L → 2L` below which a genuine eigenvalue counts as stable.
pub const STABLE_SHIFT: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub gap: (f64, f64),
    pub length: f64,
    pub n: usize,
    /// Eigenvalues found on both domains, values from the larger one.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues that moved by more than [`ARTIFACT_SHIFT`].
    pub discarded_artifacts: Vec<f64>,
    /// Largest shift of an accepted eigenvalue.
    pub max_shift: f64,
    /// All accepted eigenvalues moved by less than [`STABLE_SHIFT`].
    pub stable: bool,
}

impl OracleReport {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Reject intervals that are not inside a spectral gap of the base problem.
pub fn check_gap(base: &crate::coefficients::CoefficientModel, gap: (f64, f64)) -> Result<()> {
    let (lo, hi) = gap;
    if !(hi > lo) {
        return Err(Error::ClosedGap { lower: lo, upper: hi });
    }
    let tol = crate::quadode::DEFAULT_TOL;
    let d_mid = floquet::discriminant(base, 0.5 * (lo + hi), tol)?;
    if abs(d_mid) <= 2.0 {
        // |D| touching 2 from below at the centre: bands meet there
        if abs(d_mid) >= 2.0 - floquet::DEFAULT_TOL_EDGE {
            return Err(Error::ClosedGap { lower: lo, upper: hi });
        }
        return Err(Error::Precondition(format!("({lo}, {hi}) lies in a band (D = {d_mid} at its centre)")));
    }
    for j in 0..=16 {
        let l = lo + (hi - lo) * j as f64 / 16.0;
        let d = floquet::discriminant(base, l, tol)?;
        if abs(d) < 2.0 - floquet::DEFAULT_TOL_EDGE {
            return Err(Error::Precondition(format!("({lo}, {hi}) overlaps a band at λ = {l} (D = {d})")));
        }
    }
    Ok(())
}

/// Doublings of `L` tried before the oracle reports instability.
pub const MAX_DOUBLINGS: usize = 3;

fn match_levels(small: &[f64], large: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut used = alloc::vec![false; small.len()];
    let mut accepted = Vec::new();
    let mut artifacts = Vec::new();
    let mut max_shift: f64 = 0.0;
    for &e in large {
        let best = small
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .min_by(|a, b| abs(a.1 - e).partial_cmp(&abs(b.1 - e)).unwrap());
        match best {
            Some((i, s)) if abs(s - e) <= ARTIFACT_SHIFT => {
                used[i] = true;
                max_shift = max_shift.max(abs(s - e));
                accepted.push(e);
            }
            _ => artifacts.push(e),
        }
    }
    artifacts.extend(small.iter().zip(used.iter()).filter(|(_, u)| !**u).map(|(s, _)| *s));
    artifacts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (accepted, artifacts, max_shift)
}

/// Eigenvalues in the gap from `L` and `2L` (at `n` and `2n` intervals, so
/// the step is unchanged), with boundary artifacts filtered out. While the
/// accepted eigenvalues still move by more than [`STABLE_SHIFT`] the domain
/// keeps doubling, up to [`MAX_DOUBLINGS`] times; the report carries the
/// last pair of lengths compared (`length` is the smaller one).
pub fn oracle_gap_eigenvalues(problem: OracleProblem<'_>, gap: (f64, f64), length: f64, n: usize) -> Result<OracleReport> {
    check_gap(problem.base(), gap)?;
    if !(length > problem.period()) {
        return Err(Error::InvalidParameter(format!("truncation length {length} shorter than one period")));
    }
    let tol = 1e-12;
    let mut l = length;
    let mut m = n;
    let mut small = problem.pencil(l, m)?.eigenvalues_in(gap.0, gap.1, tol);
    let mut previous_count = None;
    let mut doublings = 0;
    loop {
        let large = problem.pencil(2.0 * l, 2 * m)?.eigenvalues_in(gap.0, gap.1, tol);
        let (eigenvalues, artifacts, max_shift) = match_levels(&small, &large);
        let stable = max_shift <= STABLE_SHIFT && previous_count.is_none_or(|c| c == eigenvalues.len());
        doublings += 1;
        if stable || doublings >= MAX_DOUBLINGS {
            return Ok(OracleReport {
                gap,
                length: l,
                n: m,
                eigenvalues,
                discarded_artifacts: artifacts,
                max_shift,
                stable,
            });
        }
        previous_count = Some(eigenvalues.len());
        small = large;
        l *= 2.0;
        m *= 2;
    }
}

/// Eigenvalues within `radius` of a band edge on `L` and `2L`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWindow {
    pub edge: f64,
    pub radius: f64,
    pub length: f64,
    pub n: usize,
    pub near_small: Vec<f64>,
    pub near_large: Vec<f64>,
    /// Eigenvalues of the larger domain that moved by at most
    /// [`STABLE_SHIFT`].
    pub stable: Vec<f64>,
}

/// Look for L-stable eigenvalues next to a band edge. No gap check: the
/// window straddles the edge on purpose.
pub fn edge_window(problem: OracleProblem<'_>, edge: f64, radius: f64, length: f64, n: usize) -> Result<EdgeWindow> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("window radius {radius} must be positive")));
    }
    let tol = 1e-13;
    let (lo, hi) = (edge - radius, edge + radius);
    let near_small = problem.pencil(length, n)?.eigenvalues_in(lo, hi, tol);
    let near_large = problem.pencil(2.0 * length, 2 * n)?.eigenvalues_in(lo, hi, tol);
    let stable = near_large
        .iter()
        .copied()
        .filter(|e| near_small.iter().any(|s| abs(s - e) <= STABLE_SHIFT))
        .collect();
    Ok(EdgeWindow { edge, radius, length, n, near_small, near_large, stable })
}

/// Eigenvalue counts per spectral bin on `L` and `2L`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedCounts {
    pub bins: Vec<f64>,
    pub length: f64,
    pub small: Vec<usize>,
    pub large: Vec<usize>,
}

/// Counting function differences over the consecutive `bins`.
pub fn binned_counts(problem: OracleProblem<'_>, bins: &[f64], length: f64, n: usize) -> Result<BinnedCounts> {
    if bins.len() < 2 || bins.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("bins must be strictly increasing with at least two entries".into()));
    }
    let count = |p: &TridiagonalPencil| -> Vec<usize> {
        let c: Vec<usize> = bins.iter().map(|b| p.sturm_count(*b)).collect();
        c.windows(2).map(|w| w[1] - w[0]).collect()
    };
    let small = count(&problem.pencil(length, n)?);
    let large = count(&problem.pencil(2.0 * length, 2 * n)?);
    Ok(BinnedCounts { bins: bins.to_vec(), length, small, large })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_builtin, PerturbationTerm, Profile};
    use crate::math::PI;
    use alloc::vec;

    fn two_by_two() -> TridiagonalPencil {
        TridiagonalPencil {
            diag: vec![2.0, 2.0],
            offdiag: vec![-1.0],
            weight_diag: vec![1.0, 1.0],
            h: 1.0,
            domain: (0.0, 3.0),
            bc: LeftBoundary::Dirichlet,
        }
    }

    #[test]
    fn small_counts() {
        let p = two_by_two();
        assert_eq!(sturm_count(&p, 2.0), 1);
        assert_eq!(sturm_count(&p, 0.0), 0);
        assert_eq!(sturm_count(&p, 4.0), 2);
        let e = p.eigenvalues_in(0.0, 4.0, 1e-14);
        assert!(abs(e[0] - 1.0) < 1e-12 && abs(e[1] - 3.0) < 1e-12);
        // eigenvalue exactly at the shift
        let c = p.sturm_count_detailed(1.0);
        assert_eq!(c.count, 0);
    }

    #[test]
    fn free_dirichlet_closed_form() {
        let free = make_builtin("free", &[PI]).unwrap();
        let n = 64;
        let p = discretize(&free, 0.0, PI, n, LeftBoundary::Dirichlet).unwrap();
        assert_eq!(p.len(), n - 1);
        let e = p.eigenvalues_in(0.0, 5000.0, 1e-16);
        assert_eq!(e.len(), n - 1);
        let h = PI / n as f64;
        for (k, v) in e.iter().enumerate() {
            let s = sin((k + 1) as f64 * h / 2.0);
            let exact = 4.0 / (h * h) * s * s;
            assert!(abs(v - exact) <= 1e-12 * exact.max(1.0), "{k}: {v} vs {exact}");
        }
    }

    #[test]
    fn weight_scaling_halves_eigenvalues() {
        let one = make_builtin("free", &[PI]).unwrap();
        let two = crate::coefficients::CoefficientModel::periodic(
            crate::coefficients::BaseFamily::Free { omega: PI, weight: 2.0 },
            0.0,
        )
        .unwrap();
        let p1 = discretize(&one, 0.0, PI, 32, LeftBoundary::Dirichlet).unwrap();
        let p2 = discretize(&two, 0.0, PI, 32, LeftBoundary::Dirichlet).unwrap();
        let e1 = p1.eigenvalues_in(0.0, 1000.0, 1e-15);
        let e2 = p2.eigenvalues_in(0.0, 1000.0, 1e-15);
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert!(abs(a / 2.0 - b) < 1e-11 * a);
        }
    }

    #[test]
    fn neumann_condition_on_free_problem() {
        // α = π/2: u'(0) = 0, u(π) = 0 → eigenvalues (k + 1/2)²
        let free = make_builtin("free", &[PI]).unwrap();
        let p = discretize(&free, 0.0, PI, 2000, LeftBoundary::Alpha(PI / 2.0)).unwrap();
        let e = p.eigenvalues_in(0.0, 10.0, 1e-14);
        assert_eq!(e.len(), 3);
        for (k, v) in e.iter().enumerate() {
            let exact = (k as f64 + 0.5) * (k as f64 + 0.5);
            assert!(abs(v - exact) < 1e-5, "{v} vs {exact}");
        }
    }

    #[test]
    fn closed_gap_is_rejected() {
        let free = make_builtin("free", &[PI]).unwrap();
        let pair = PerturbedPair::unperturbed(free).unwrap();
        let r = oracle_gap_eigenvalues(OracleProblem::HalfLine { pair: &pair, alpha: 0.0 }, (0.9, 1.1), 10.0, 100);
        assert!(matches!(r, Err(Error::ClosedGap { .. })));
        let r = oracle_gap_eigenvalues(OracleProblem::HalfLine { pair: &pair, alpha: 0.0 }, (1.5, 2.5), 10.0, 100);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn well_in_first_gap_is_stable() {
        let base = make_builtin("mathieu", &[1.0]).unwrap();
        let well = Profile::SquareWell { depth: -2.0, start: 0.0, width: 2.0 };
        let pair = PerturbedPair::new(base, vec![PerturbationTerm::q(well)], 1).unwrap();
        let gap = (-0.1102488169906428 + 1e-6, 1.85910807251581 - 1e-6);
        let l = default_length(PI, 12);
        let r = oracle_gap_eigenvalues(OracleProblem::HalfLine { pair: &pair, alpha: 0.0 }, gap, l, 3000).unwrap();
        assert!(r.stable, "{r:?}");
    }
}
