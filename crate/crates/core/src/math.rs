// Elementary functions routed through libm so results are identical with
// and without `std`.
pub(crate) use libm::{acos, acosh, atan2, cos, erfc, exp, fabs as abs, pow, sin, sqrt};

pub(crate) const PI: f64 = core::f64::consts::PI;

/// Largest float strictly below `x`.
pub(crate) fn next_below(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits - 1)
    } else {
        f64::from_bits(bits + 1)
    }
}

pub(crate) fn powi(x: f64, n: i32) -> f64 {
    let mut acc = 1.0;
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut e = n.unsigned_abs();
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

pub(crate) fn hypot(a: f64, b: f64) -> f64 {
    libm::hypot(a, b)
}

/// `x mod m` in `[0, m)`.
pub(crate) fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = libm::fmod(x, m);
    if r < 0.0 {
        r + m
    } else {
        r
    }
}
