//! Fixed-size 2×2 helpers for transfer matrices and quasi-derivative states.

use core::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::math::{abs, hypot, sqrt};

/// Complex quasi-derivative state `(u, p u')`.
pub type CState = [Complex64; 2];

/// Real 2×2 matrix stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    /// Matrix with the given columns.
    pub fn from_columns(c0: [f64; 2], c1: [f64; 2]) -> Self {
        Mat2([[c0[0], c1[0]], [c0[1], c1[1]]])
    }

    pub fn column(&self, j: usize) -> [f64; 2] {
        [self.0[0][j], self.0[1][j]]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let m = self.0;
        Mat2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    /// Inverse via the adjugate; `None` for a singular matrix.
    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = self.0;
        Some(Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn apply_c(&self, v: CState) -> CState {
        let m = self.0;
        [v[0] * m[0][0] + v[1] * m[0][1], v[0] * m[1][0] + v[1] * m[1][1]]
    }

    /// Largest singular value.
    pub fn norm(&self) -> f64 {
        singular_values(self).0
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        let m = self.0;
        sqrt(m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1])
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max(abs(self.0[i][j] - other.0[i][j]));
            }
        }
        d
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = self.0;
        let b = rhs.0;
        Mat2([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }
}

impl Add for Mat2 {
    type Output = Mat2;

    fn add(self, rhs: Mat2) -> Mat2 {
        let a = self.0;
        let b = rhs.0;
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    fn sub(self, rhs: Mat2) -> Mat2 {
        let a = self.0;
        let b = rhs.0;
        Mat2([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
    }
}

/// Singular values `(σ_max, σ_min)` of a real 2×2 matrix.
pub fn singular_values(m: &Mat2) -> (f64, f64) {
    let [[a, b], [c, d]] = m.0;
    // Closed form via the invariants of M^T M.
    let s1 = a * a + b * b + c * c + d * d;
    let det = abs(a * d - b * c);
    let disc = hypot(a * a + b * b - c * c - d * d, 2.0 * (a * c + b * d));
    let smax = sqrt(0.5 * (s1 + disc));
    let smin = if smax > 0.0 { det / smax } else { 0.0 };
    (smax, smin)
}

pub fn cnorm(v: &CState) -> f64 {
    sqrt(v[0].norm_sqr() + v[1].norm_sqr())
}

pub fn csub(a: &CState, b: &CState) -> CState {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn cadd(a: &CState, b: &CState) -> CState {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn cscale(a: &CState, s: Complex64) -> CState {
    [a[0] * s, a[1] * s]
}

pub fn creal(v: [f64; 2]) -> CState {
    [Complex64::new(v[0], 0.0), Complex64::new(v[1], 0.0)]
}

/// Wronskian `f (p g') - (p f') g` of two complex states.
pub fn cwronskian(f: &CState, g: &CState) -> Complex64 {
    f[0] * g[1] - f[1] * g[0]
}

/// Real 2×2 matrix applied to a complex vector from the right of a row: `M v`.
pub fn mat_apply_c(m: &Mat2, v: &CState) -> CState {
    m.apply_c(*v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_values_of_diagonal() {
        let (smax, smin) = singular_values(&Mat2::new(3.0, 0.0, 0.0, -0.5));
        assert!((smax - 3.0).abs() < 1e-15);
        assert!((smin - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_values_of_shear() {
        // [[1, 1], [0, 1]] has singular values golden ratio and its inverse.
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let (smax, smin) = singular_values(&Mat2::new(1.0, 1.0, 0.0, 1.0));
        assert!((smax - phi).abs() < 1e-14);
        assert!((smin - 1.0 / phi).abs() < 1e-14);
    }

    #[test]
    fn inverse_round_trip() {
        let m = Mat2::new(2.0, 1.0, 7.0, 4.0);
        let p = m * m.inverse().unwrap();
        assert!(p.max_abs_diff(&Mat2::IDENTITY) < 1e-14);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }
}
