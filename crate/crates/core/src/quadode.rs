//! Adaptive propagation of the quasi-derivative system
//!
//! ```text
//! u'    = (1/p) · (p u')
//! (pu')' = (q - λ r) · u
//! ```
//!
//! The stepper is an explicit Runge–Kutta pair of order 8 with embedded
//! 5th/3rd order error estimates. Integration is split at the breakpoints the
//! model declares, so a step never straddles a jump of a coefficient. Inside
//! a segment `[lo, hi]` the coefficients are evaluated right-continuously,
//! except at `hi` itself where the left limit is used.

use alloc::vec::Vec;

use crate::coefficients::{Coefficients, Triple};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::math::{abs, next_below, pow, sqrt};
use crate::tableau::{A, B, C, E3, E5, STAGES};

/// Default integrator tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

/// Error-control settings of the propagator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Tolerance {
    /// Mixed tolerance with `rtol = tol` and `atol = tol / 100`.
    pub fn new(tol: f64) -> Self {
        Tolerance { rtol: tol, atol: 1e-2 * tol, max_steps: 2_000_000 }
    }

    fn check(&self) -> Result<()> {
        if self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!("tolerance must be positive, got {}", self.rtol)))
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(DEFAULT_TOL)
    }
}

/// Quasi-derivative pair `(u, p u')` at a position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector {
    pub x: f64,
    pub u: f64,
    pub pu: f64,
}

impl StateVector {
    pub fn new(x: f64, u: f64, pu: f64) -> Self {
        StateVector { x, u, pu }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.u, self.pu]
    }
}

/// Propagator `Φ(to_x) Φ(from_x)^{-1}` of the system at a fixed `λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferMatrix {
    pub entries: Mat2,
    pub from_x: f64,
    pub to_x: f64,
    pub lambda: f64,
}

impl TransferMatrix {
    pub fn det(&self) -> f64 {
        self.entries.det()
    }

    pub fn apply(&self, s: &StateVector) -> Result<StateVector> {
        if s.x != self.from_x {
            return Err(Error::PositionMismatch { left: s.x, right: self.from_x });
        }
        let [u, pu] = self.entries.apply([s.u, s.pu]);
        Ok(StateVector::new(self.to_x, u, pu))
    }
}

/// Adaptive integrator bound to one coefficient model. The accepted step
/// size is kept between calls, so marching through a list of stops costs
/// little more than a single long run.
pub struct Integrator<'a, M: Coefficients + ?Sized> {
    model: &'a M,
    tol: Tolerance,
    h: Option<f64>,
    steps: usize,
}

fn rms<const N: usize>(v: &[f64; N], scale: &[f64; N]) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let s = v[i] / scale[i];
        acc += s * s;
    }
    sqrt(acc / N as f64)
}

fn finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

impl<'a, M: Coefficients + ?Sized> Integrator<'a, M> {
    pub fn new(model: &'a M, tol: Tolerance) -> Self {
        Integrator { model, tol, h: None, steps: 0 }
    }

    /// Number of accepted and rejected steps so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Integrate `y' = rhs(coeffs(x), x, y)` from `x0` to `x1` (either
    /// direction), stopping at every breakpoint in between.
    pub fn advance<const N: usize, F>(&mut self, rhs: &F, x0: f64, y0: [f64; N], x1: f64) -> Result<[f64; N]>
    where
        F: Fn(&Triple, f64, &[f64; N]) -> [f64; N],
    {
        self.tol.check()?;
        if !finite(&y0) || !x0.is_finite() || !x1.is_finite() {
            return Err(Error::NonFinite { x: x0 });
        }
        if x0 == x1 {
            return Ok(y0);
        }
        let (lo, hi) = if x0 < x1 { (x0, x1) } else { (x1, x0) };
        let mut cuts = self.model.breakpoints(lo, hi);
        if x1 < x0 {
            cuts.reverse();
        }
        cuts.push(x1);
        let mut x = x0;
        let mut y = y0;
        for &stop in &cuts {
            y = self.segment(rhs, x, y, stop)?;
            x = stop;
        }
        Ok(y)
    }

    fn segment<const N: usize, F>(&mut self, rhs: &F, x0: f64, y0: [f64; N], x1: f64) -> Result<[f64; N]>
    where
        F: Fn(&Triple, f64, &[f64; N]) -> [f64; N],
    {
        let seg_lo = x0.min(x1);
        let seg_hi = x0.max(x1);
        let model = self.model;
        let f = |x: f64, y: &[f64; N]| -> [f64; N] {
            let xe = if x >= seg_hi { next_below(seg_hi) } else { x.max(seg_lo) };
            rhs(&model.eval(xe), x, y)
        };
        let dir = if x1 > x0 { 1.0 } else { -1.0 };
        let rtol = self.tol.rtol;
        let atol = self.tol.atol;

        let mut x = x0;
        let mut y = y0;
        let mut fx = f(x, &y);
        if !finite(&fx) {
            return Err(Error::NonFinite { x });
        }
        let mut h_abs = match self.h {
            Some(h) => h,
            None => self.initial_step(&f, x0, &y0, &fx, x1),
        };
        let mut k = [[0.0; N]; STAGES];
        loop {
            let remaining = abs(x1 - x);
            if remaining == 0.0 {
                break;
            }
            let min_step = 10.0 * abs(libm::nextafter(x, dir * f64::INFINITY) - x);
            let proposal = h_abs;
            let mut clipped = false;
            if h_abs >= remaining {
                h_abs = remaining;
                clipped = true;
            }
            let mut rejected = false;
            loop {
                if h_abs < min_step && !clipped {
                    return Err(Error::StepUnderflow { x, h: h_abs });
                }
                self.steps += 1;
                if self.steps > self.tol.max_steps {
                    return Err(Error::TooManySteps { x, steps: self.tol.max_steps });
                }
                let h = dir * h_abs;
                k[0] = fx;
                for s in 1..STAGES {
                    let mut ys = y;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            for i in 0..N {
                                ys[i] += h * a * kj[i];
                            }
                        }
                    }
                    k[s] = f(x + C[s] * h, &ys);
                }
                let mut y_new = y;
                let mut err5 = [0.0; N];
                let mut err3 = [0.0; N];
                for (s, ks) in k.iter().enumerate() {
                    for i in 0..N {
                        y_new[i] += h * B[s] * ks[i];
                        err5[i] += E5[s] * ks[i];
                        err3[i] += E3[s] * ks[i];
                    }
                }
                let x_new = if clipped && h_abs == remaining { x1 } else { x + h };
                if !finite(&y_new) {
                    // Treat as a failed step first; a genuine blow-up shows
                    // up as underflow or persists at tiny steps.
                    if h_abs <= min_step {
                        return Err(Error::NonFinite { x });
                    }
                    h_abs *= MIN_FACTOR;
                    clipped = false;
                    rejected = true;
                    continue;
                }
                let mut scale = [0.0; N];
                for i in 0..N {
                    scale[i] = atol + abs(y[i]).max(abs(y_new[i])) * rtol;
                }
                let e5 = rms(&err5, &scale);
                let e3 = rms(&err3, &scale);
                let e5sq = e5 * e5 * N as f64;
                let denom = e5sq + 0.01 * e3 * e3 * N as f64;
                let err = if denom > 0.0 { h_abs * e5sq / sqrt(denom * N as f64) } else { 0.0 };
                if err < 1.0 {
                    let mut factor =
                        if err == 0.0 { MAX_FACTOR } else { MAX_FACTOR.min(SAFETY * pow(err, ERROR_EXPONENT)) };
                    if rejected {
                        factor = factor.min(1.0);
                    }
                    let next = h_abs * factor;
                    x = x_new;
                    y = y_new;
                    fx = f(x, &y);
                    if !finite(&fx) {
                        return Err(Error::NonFinite { x });
                    }
                    h_abs = if clipped && !rejected { next.max(proposal) } else { next };
                    break;
                }
                h_abs *= MIN_FACTOR.max(SAFETY * pow(err, ERROR_EXPONENT));
                clipped = false;
                rejected = true;
            }
        }
        self.h = Some(h_abs);
        Ok(y)
    }

    fn initial_step<const N: usize, F>(&self, f: &F, x0: f64, y0: &[f64; N], f0: &[f64; N], x1: f64) -> f64
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
    {
        let interval = abs(x1 - x0);
        let dir = if x1 > x0 { 1.0 } else { -1.0 };
        let mut scale = [0.0; N];
        for i in 0..N {
            scale[i] = self.tol.atol + abs(y0[i]) * self.tol.rtol;
        }
        let d0 = rms(y0, &scale);
        let d1 = rms(f0, &scale);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(interval);
        let mut y1 = *y0;
        for i in 0..N {
            y1[i] += dir * h0 * f0[i];
        }
        let f1 = f(x0 + dir * h0, &y1);
        let mut diff = [0.0; N];
        for i in 0..N {
            diff[i] = f1[i] - f0[i];
        }
        let d2 = rms(&diff, &scale) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (1e-6f64).max(h0 * 1e-3)
        } else {
            pow(0.01 / d1.max(d2), 1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(interval)
    }
}

/// Right-hand side of the state equation at spectral parameter `λ`.
pub fn state_rhs(lambda: f64) -> impl Fn(&Triple, f64, &[f64; 2]) -> [f64; 2] {
    move |t, _, y| [t.inv_p * y[1], (t.q - lambda * t.r) * y[0]]
}

/// Right-hand side for the transfer matrix, stored row-major.
pub fn matrix_rhs(lambda: f64) -> impl Fn(&Triple, f64, &[f64; 4]) -> [f64; 4] {
    move |t, _, y| {
        let w = t.q - lambda * t.r;
        [t.inv_p * y[2], t.inv_p * y[3], w * y[0], w * y[1]]
    }
}

pub(crate) fn mat_from(y: &[f64]) -> Mat2 {
    Mat2::new(y[0], y[1], y[2], y[3])
}

pub(crate) fn mat_to(m: &Mat2) -> [f64; 4] {
    [m.0[0][0], m.0[0][1], m.0[1][0], m.0[1][1]]
}

/// Solve the state equation from `from` to `to_x`.
pub fn propagate_state<M: Coefficients + ?Sized>(
    model: &M,
    lambda: f64,
    from: StateVector,
    to_x: f64,
    tol: f64,
) -> Result<StateVector> {
    let mut integ = Integrator::new(model, Tolerance::new(tol));
    let y = integ.advance(&state_rhs(lambda), from.x, [from.u, from.pu], to_x)?;
    Ok(StateVector::new(to_x, y[0], y[1]))
}

/// Transfer matrix from `x0` to `x1`; its columns are the propagations of
/// `(1, 0)` and `(0, 1)`.
pub fn transfer_matrix<M: Coefficients + ?Sized>(
    model: &M,
    lambda: f64,
    x0: f64,
    x1: f64,
    tol: f64,
) -> Result<TransferMatrix> {
    let mut integ = Integrator::new(model, Tolerance::new(tol));
    let y = integ.advance(&matrix_rhs(lambda), x0, mat_to(&Mat2::IDENTITY), x1)?;
    Ok(TransferMatrix { entries: mat_from(&y), from_x: x0, to_x: x1, lambda })
}

/// Transfer matrices `Φ(x_i) Φ(x0)^{-1}` at each of the ascending (or
/// descending) stops `xs`.
pub fn transfer_matrices_at<M: Coefficients + ?Sized>(
    model: &M,
    lambda: f64,
    x0: f64,
    xs: &[f64],
    tol: f64,
) -> Result<Vec<Mat2>> {
    let rhs = matrix_rhs(lambda);
    let mut integ = Integrator::new(model, Tolerance::new(tol));
    let mut out = Vec::with_capacity(xs.len());
    let mut x = x0;
    let mut y = mat_to(&Mat2::IDENTITY);
    for &xi in xs {
        y = integ.advance(&rhs, x, y, xi)?;
        x = xi;
        out.push(mat_from(&y));
    }
    Ok(out)
}

/// Solution states at each of the stops `xs`, starting from `y0` at `x0`.
pub fn states_at<M: Coefficients + ?Sized>(
    model: &M,
    lambda: f64,
    x0: f64,
    y0: [f64; 2],
    xs: &[f64],
    tol: f64,
) -> Result<Vec<[f64; 2]>> {
    let rhs = state_rhs(lambda);
    let mut integ = Integrator::new(model, Tolerance::new(tol));
    let mut out = Vec::with_capacity(xs.len());
    let mut x = x0;
    let mut y = y0;
    for &xi in xs {
        y = integ.advance(&rhs, x, y, xi)?;
        x = xi;
        out.push(y);
    }
    Ok(out)
}

/// Transfer matrix over `[x0, x1]` together with its `λ`-derivative.
pub fn transfer_matrix_with_derivative<M: Coefficients + ?Sized>(
    model: &M,
    lambda: f64,
    x0: f64,
    x1: f64,
    tol: f64,
) -> Result<(Mat2, Mat2)> {
    let rhs = move |t: &Triple, _: f64, y: &[f64; 8]| {
        let w = t.q - lambda * t.r;
        [
            t.inv_p * y[2],
            t.inv_p * y[3],
            w * y[0],
            w * y[1],
            t.inv_p * y[6],
            t.inv_p * y[7],
            w * y[4] - t.r * y[0],
            w * y[5] - t.r * y[1],
        ]
    };
    let mut integ = Integrator::new(model, Tolerance::new(tol));
    let y = integ.advance(&rhs, x0, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], x1)?;
    Ok((mat_from(&y[..4]), mat_from(&y[4..])))
}

/// Transfer matrix over `[x0, x1]` and the weighted Gram matrix
/// `G = ∫ Φᵀ diag(r, 0) Φ`, returned as `(g11, g12, g22)`.
pub fn transfer_matrix_with_gram<M: Coefficients + ?Sized>(
    model: &M,
    lambda: f64,
    x0: f64,
    x1: f64,
    tol: f64,
) -> Result<(Mat2, [f64; 3])> {
    let rhs = move |t: &Triple, _: f64, y: &[f64; 7]| {
        let w = t.q - lambda * t.r;
        [
            t.inv_p * y[2],
            t.inv_p * y[3],
            w * y[0],
            w * y[1],
            t.r * y[0] * y[0],
            t.r * y[0] * y[1],
            t.r * y[1] * y[1],
        ]
    };
    let mut integ = Integrator::new(model, Tolerance::new(tol));
    let y = integ.advance(&rhs, x0, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], x1)?;
    Ok((mat_from(&y[..4]), [y[4], y[5], y[6]]))
}

/// Wronskian `u₁ (p u₂') - (p u₁') u₂` of two states at the same point.
pub fn wronskian(s1: &StateVector, s2: &StateVector) -> Result<f64> {
    if s1.x != s2.x {
        return Err(Error::PositionMismatch { left: s1.x, right: s2.x });
    }
    Ok(s1.u * s2.pu - s1.pu * s2.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::make_builtin;
    use crate::math::PI;

    #[test]
    fn linear_solution() {
        let m = make_builtin("free", &[PI]).unwrap();
        let s = propagate_state(&m, 0.0, StateVector::new(0.0, 0.0, 1.0), 1.0, 1e-10).unwrap();
        assert!((s.u - 1.0).abs() < 1e-12 && (s.pu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_solution() {
        let m = make_builtin("free", &[PI]).unwrap();
        let s = propagate_state(&m, -1.0, StateVector::new(0.0, 1.0, -1.0), 1.0, 1e-10).unwrap();
        let e = (-1.0f64).exp();
        assert!((s.u - e).abs() < 1e-10 && (s.pu + e).abs() < 1e-10);
        let back = propagate_state(&m, -1.0, s, 0.0, 1e-10).unwrap();
        assert!((back.u - 1.0).abs() < 1e-9);
    }

    #[test]
    fn free_transfer_matrices() {
        let m = make_builtin("free", &[PI]).unwrap();
        let t = transfer_matrix(&m, 0.0, 0.0, 1.0, 1e-10).unwrap();
        assert!(t.entries.max_abs_diff(&Mat2::new(1.0, 1.0, 0.0, 1.0)) < 1e-12);
        let t = transfer_matrix(&m, 1.0, 0.0, PI, 1e-10).unwrap();
        assert!(t.entries.max_abs_diff(&Mat2::new(-1.0, 0.0, 0.0, -1.0)) < 1e-9);
    }

    #[test]
    fn mathieu_matches_tighter_run() {
        let m = make_builtin("mathieu", &[1.0]).unwrap();
        let s0 = StateVector::new(0.0, 1.0, 0.0);
        let a = propagate_state(&m, 0.0, s0, PI, 1e-10).unwrap();
        let b = propagate_state(&m, 0.0, s0, PI, 1e-12).unwrap();
        assert!((a.u - b.u).abs() < 1e-9 && (a.pu - b.pu).abs() < 1e-9);
    }

    #[test]
    fn jump_in_p_keeps_flux_continuous() {
        // Two layers with 1/p = 1 and 1/p = 4: u = x on the first layer
        // continues with slope 4 on the second since p u' is continuous.
        let m = make_builtin("layered", &[2.0, 0.5, 1.0, 4.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let s = propagate_state(&m, 0.0, StateVector::new(0.0, 0.0, 1.0), 2.0, 1e-10).unwrap();
        assert!((s.u - 5.0).abs() < 1e-12, "{}", s.u);
        assert!((s.pu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wronskian_examples() {
        let x = 0.7f64;
        let a = StateVector::new(x, x.cos(), -x.sin());
        let b = StateVector::new(x, x.sin(), x.cos());
        assert!((wronskian(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(wronskian(&a, &a).unwrap(), 0.0);
        let c = StateVector::new(0.0, 1.0, 0.0);
        assert!(matches!(wronskian(&a, &c), Err(Error::PositionMismatch { .. })));
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let m = make_builtin("mathieu", &[1.0]).unwrap();
        let (_, d) = transfer_matrix_with_derivative(&m, 0.3, 0.0, PI, 1e-12).unwrap();
        let h = 1e-5;
        let p = transfer_matrix(&m, 0.3 + h, 0.0, PI, 1e-12).unwrap().entries;
        let q = transfer_matrix(&m, 0.3 - h, 0.0, PI, 1e-12).unwrap().entries;
        let fd = (p - q).scale(0.5 / h);
        assert!(fd.max_abs_diff(&d) < 1e-6);
    }
}
