//! Quadrature rules: fixed and adaptive Gauss–Legendre for smooth integrands
//! given as closures, and local cubic rules for integrands sampled on a grid.

use alloc::vec::Vec;

use crate::math::abs;

const GL20_NODES: [f64; 20] = [-0.9931285991850949, -0.9639719272779138, -0.9122344282513258, -0.8391169718222188, -0.7463319064601508, -0.636053680726515, -0.5108670019508271, -0.37370608871541955, -0.2277858511416451, -0.07652652113349734, 0.07652652113349734, 0.2277858511416451, 0.37370608871541955, 0.5108670019508271, 0.636053680726515, 0.7463319064601508, 0.8391169718222188, 0.9122344282513258, 0.9639719272779138, 0.9931285991850949];
const GL20_WEIGHTS: [f64; 20] = [0.017614007139153273, 0.04060142980038622, 0.06267204833410944, 0.08327674157670467, 0.10193011981724026, 0.11819453196151825, 0.13168863844917653, 0.14209610931838187, 0.14917298647260366, 0.15275338713072578, 0.15275338713072578, 0.14917298647260366, 0.14209610931838187, 0.13168863844917653, 0.11819453196151825, 0.10193011981724026, 0.08327674157670467, 0.06267204833410944, 0.04060142980038622, 0.017614007139153273];
const GL10_NODES: [f64; 10] = [-0.9739065285171717, -0.8650633666889845, -0.6794095682990244, -0.4333953941292472, -0.14887433898163122, 0.14887433898163122, 0.4333953941292472, 0.6794095682990244, 0.8650633666889845, 0.9739065285171717];
const GL10_WEIGHTS: [f64; 10] = [0.06667134430868807, 0.14945134915058036, 0.219086362515982, 0.2692667193099965, 0.295524224714753, 0.295524224714753, 0.2692667193099965, 0.219086362515982, 0.14945134915058036, 0.06667134430868807];

/// 20-point Gauss–Legendre rule on `[lo, hi]`.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (x, w) in GL20_NODES.iter().zip(GL20_WEIGHTS.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn gauss_legendre10<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (x, w) in GL10_NODES.iter().zip(GL10_WEIGHTS.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Adaptive bisection driven by the difference between the 10- and 20-point
/// rules. `tol` is absolute. Returns the integral estimate.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut stack: Vec<(f64, f64, usize)> = Vec::new();
    stack.push((lo, hi, 0));
    let total = hi - lo;
    let mut acc = 0.0;
    while let Some((a, b, depth)) = stack.pop() {
        let coarse = gauss_legendre10(&mut f, a, b);
        let fine = gauss_legendre(&mut f, a, b);
        let local_tol = tol * (b - a) / total;
        if abs(fine - coarse) <= local_tol.max(1e-15 * abs(fine)) || depth >= 40 {
            acc += fine;
        } else {
            let m = 0.5 * (a + b);
            stack.push((a, m, depth + 1));
            stack.push((m, b, depth + 1));
        }
    }
    acc
}

/// Weights `w_j = ∫_lo^hi L_j(t) dt` of the Lagrange interpolant through
/// `nodes` (at most four distinct abscissae).
pub fn lagrange_weights(nodes: &[f64], lo: f64, hi: f64) -> [f64; 4] {
    let n = nodes.len();
    debug_assert!((1..=4).contains(&n));
    let h = hi - lo;
    let mut out = [0.0; 4];
    for j in 0..n {
        // Coefficients of L_j in the shifted variable s = t - lo.
        let mut coeffs = [0.0f64; 4];
        coeffs[0] = 1.0;
        let mut degree = 0;
        let mut denom = 1.0;
        for (k, &zk) in nodes.iter().enumerate() {
            if k == j {
                continue;
            }
            let shift = zk - lo;
            // multiply by (s - shift)
            let mut next = [0.0f64; 4];
            for m in 0..=degree {
                next[m + 1] += coeffs[m];
                next[m] -= shift * coeffs[m];
            }
            coeffs = next;
            degree += 1;
            denom *= nodes[j] - zk;
        }
        let mut integral = 0.0;
        let mut hp = h;
        for (m, c) in coeffs.iter().enumerate().take(degree + 1) {
            integral += c * hp / (m as f64 + 1.0);
            hp *= h;
        }
        out[j] = integral / denom;
    }
    out
}

/// Per-interval cubic weights for a segment with nodes `xs` (ascending).
///
/// Entry `i` integrates over `[xs[i], xs[i+1]]` and is `(first, weights)`:
/// the integral is `Σ_k weights[k] * f[first + k]` over the stencil. Segments
/// with fewer than four nodes fall back to lower-degree interpolation.
pub fn segment_weights(xs: &[f64]) -> Vec<(usize, [f64; 4], usize)> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return out;
    }
    let width = n.min(4);
    for i in 0..n - 1 {
        // Centre the stencil on the interval where possible.
        let mut first = i.saturating_sub(1);
        if first + width > n {
            first = n - width;
        }
        let w = lagrange_weights(&xs[first..first + width], xs[i], xs[i + 1]);
        out.push((first, w, width));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let v = gauss_legendre(|x| x.powi(7) - 3.0 * x * x + 1.0, -1.0, 2.0);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0) + 3.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let v = adaptive(|x| (-x).exp(), 0.0, 60.0, 1e-13);
        assert!((v - (1.0 - (-60f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn cubic_weights_exact_for_cubics() {
        let xs = [0.0, 0.1, 0.25, 0.3, 0.5, 0.55, 0.9];
        let f = |x: f64| 2.0 * x * x * x - x + 0.5;
        let exact = |a: f64, b: f64| {
            let fi = |x: f64| 0.5 * x.powi(4) - 0.5 * x * x + 0.5 * x;
            fi(b) - fi(a)
        };
        for (i, (first, w, width)) in segment_weights(&xs).into_iter().enumerate() {
            let approx: f64 = (0..width).map(|k| w[k] * f(xs[first + k])).sum();
            assert!((approx - exact(xs[i], xs[i + 1])).abs() < 1e-14, "interval {i}");
        }
    }

    #[test]
    fn short_segments_degrade_gracefully() {
        let xs = [1.0, 1.5];
        let w = segment_weights(&xs);
        assert_eq!(w.len(), 1);
        let (first, w, width) = w[0];
        assert_eq!((first, width), (0, 2));
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    }
}
