//! Period-aligned sample grids on `[a, X]`.
//!
//! Every period carries the same uniform offsets ("residues") so a solution
//! of the periodic problem only has to be propagated across the first period.
//! Breakpoints of the coefficients become duplicated nodes carrying the left
//! and the right limit, which splits the grid into smooth pieces.

use alloc::vec::Vec;
use core::ops::{Add, Mul};

use crate::math::abs;
use crate::quadrature::segment_weights;

/// Which one-sided limit a node represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Ordinary node; coefficients are continuous here.
    Both,
    /// Left limit at a breakpoint.
    Left,
    /// Right limit at a breakpoint.
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub x: f64,
    /// Index `n` with `x = a + nω + residues[residue]`.
    pub period: usize,
    pub residue: usize,
    pub side: Side,
}

#[derive(Clone, Debug)]
pub struct Grid {
    a: f64,
    omega: f64,
    periods: usize,
    nodes: Vec<Node>,
    residues: Vec<f64>,
    /// Inclusive node ranges between breakpoints.
    pieces: Vec<(usize, usize)>,
    /// Interval `i` spans nodes `i, i+1`; `None` across a breakpoint.
    weights: Vec<Option<(usize, [f64; 4], usize)>>,
    /// Node index of `a + nω` for `n = 0..=periods`.
    cell_starts: Vec<usize>,
}

impl Grid {
    /// Grid on `[a, a + periods·ω]` with `per_period` uniform nodes per cell
    /// and duplicated nodes at the given breakpoints.
    pub fn new(a: f64, omega: f64, per_period: usize, periods: usize, breakpoints: &[f64]) -> Grid {
        let m = per_period.max(4);
        let periods = periods.max(1);
        let h = omega / m as f64;
        let x_end = a + periods as f64 * omega;
        let mut residues: Vec<f64> = (0..m).map(|j| j as f64 * h).collect();

        // (period, residue index, exact x) for each interior breakpoint
        let mut bps: Vec<(usize, usize, f64)> = Vec::new();
        for &b in breakpoints {
            if !(b > a && b < x_end) {
                continue;
            }
            let mut n = libm::floor((b - a) / omega) as usize;
            let mut s = b - a - n as f64 * omega;
            if s >= omega - 1e-9 * h {
                n += 1;
                s = 0.0;
            }
            if n >= periods {
                continue;
            }
            let j = libm::round(s / h) as usize;
            if j < m && abs(s - j as f64 * h) <= 1e-9 * h {
                bps.push((n, j, b));
            } else {
                residues.push(s);
                bps.push((n, residues.len() - 1, b));
            }
        }
        // Sort residues and remap indices.
        let mut order: Vec<usize> = (0..residues.len()).collect();
        order.sort_by(|&i, &j| residues[i].partial_cmp(&residues[j]).unwrap());
        let mut remap = alloc::vec![0usize; residues.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let uniform: Vec<bool> = order.iter().map(|&old| old < m).collect();
        let residues: Vec<f64> = order.iter().map(|&old| residues[old]).collect();
        for bp in bps.iter_mut() {
            bp.1 = remap[bp.1];
        }
        bps.sort_by(|p, q| p.2.partial_cmp(&q.2).unwrap());

        let mut nodes = Vec::with_capacity(periods * m + 2 * bps.len() + 1);
        let mut cell_starts = Vec::with_capacity(periods + 1);
        let mut next_bp = 0;
        for n in 0..periods {
            let base = a + n as f64 * omega;
            let here: Vec<(usize, f64)> = bps
                .iter()
                .skip(next_bp)
                .take_while(|bp| bp.0 == n)
                .map(|bp| (bp.1, bp.2))
                .collect();
            next_bp += here.len();
            for (r, &s) in residues.iter().enumerate() {
                if r == 0 {
                    cell_starts.push(nodes.len());
                }
                if let Some(&(_, b)) = here.iter().find(|(ri, _)| *ri == r) {
                    nodes.push(Node { x: b, period: n, residue: r, side: Side::Left });
                    nodes.push(Node { x: b, period: n, residue: r, side: Side::Right });
                    continue;
                }
                if !uniform[r] {
                    continue;
                }
                // Uniform nodes too close to a breakpoint of this cell would
                // make the local interpolation ill-conditioned.
                if r != 0 && here.iter().any(|&(ri, _)| ri != r && abs(residues[ri] - s) < 0.25 * h) {
                    continue;
                }
                nodes.push(Node { x: base + s, period: n, residue: r, side: Side::Both });
            }
        }
        cell_starts.push(nodes.len());
        nodes.push(Node { x: x_end, period: periods, residue: 0, side: Side::Both });

        let mut pieces = Vec::new();
        let mut start = 0;
        for i in 0..nodes.len() {
            if nodes[i].side == Side::Left {
                pieces.push((start, i));
                start = i + 1;
            }
        }
        pieces.push((start, nodes.len() - 1));

        let mut weights = alloc::vec![None; nodes.len().saturating_sub(1)];
        for &(s, e) in &pieces {
            let xs: Vec<f64> = nodes[s..=e].iter().map(|n| n.x).collect();
            for (i, (first, w, width)) in segment_weights(&xs).into_iter().enumerate() {
                weights[s + i] = Some((s + first, w, width));
            }
        }
        Grid { a, omega, periods, nodes, residues, pieces, weights, cell_starts }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn x_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1].x
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.x).collect()
    }

    /// Offsets in `[0, ω)` at which periodic data must be sampled.
    pub fn residues(&self) -> &[f64] {
        &self.residues
    }

    pub fn pieces(&self) -> &[(usize, usize)] {
        &self.pieces
    }

    /// Node index of the cell boundary `a + nω`.
    pub fn cell_start(&self, n: usize) -> usize {
        self.cell_starts[n]
    }

    /// Position at which coefficients should be evaluated for node `i`.
    pub fn eval_point(&self, i: usize) -> f64 {
        let n = &self.nodes[i];
        match n.side {
            Side::Left => crate::math::next_below(n.x),
            _ => n.x,
        }
    }

    fn interval<T>(&self, i: usize, f: &[T]) -> T
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        match self.weights[i] {
            None => T::default(),
            Some((first, w, width)) => {
                let mut acc = T::default();
                for k in 0..width {
                    acc = acc + f[first + k] * w[k];
                }
                acc
            }
        }
    }

    /// Quadrature restricted to nodes `lo..=hi`; stencils do not reach
    /// outside the window.
    pub fn window(&self, lo: usize, hi: usize) -> WindowRule {
        let mut weights = alloc::vec![None; hi - lo];
        for &(s, e) in &self.pieces {
            let (s, e) = (s.max(lo), e.min(hi));
            if e <= s {
                continue;
            }
            let xs: Vec<f64> = self.nodes[s..=e].iter().map(|n| n.x).collect();
            for (i, (first, w, width)) in segment_weights(&xs).into_iter().enumerate() {
                weights[s - lo + i] = Some((s + first, w, width));
            }
        }
        WindowRule { lo, hi, weights }
    }

    /// `∫_{x_i}^{X} f` at every node.
    pub fn cumulative_from_end<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        let n = self.nodes.len();
        let mut out = alloc::vec![T::default(); n];
        for i in (0..n - 1).rev() {
            out[i] = out[i + 1] + self.interval(i, f);
        }
        out
    }

    /// `∫_a^{x_i} f` at every node.
    pub fn cumulative_from_start<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        let n = self.nodes.len();
        let mut out = alloc::vec![T::default(); n];
        for i in 0..n - 1 {
            out[i + 1] = out[i] + self.interval(i, f);
        }
        out
    }

    /// `∫_a^X f`.
    pub fn integrate<T>(&self, f: &[T]) -> T
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        let mut acc = T::default();
        for i in 0..self.nodes.len() - 1 {
            acc = acc + self.interval(i, f);
        }
        acc
    }

    /// Integral of `f` over each cell `[a+nω, a+(n+1)ω]`.
    pub fn cell_integrals(&self, f: &[f64]) -> Vec<f64> {
        let cum = self.cumulative_from_start(f);
        (0..self.periods).map(|n| cum[self.cell_starts[n + 1]] - cum[self.cell_starts[n]]).collect()
    }
}

/// Local quadrature on a window of consecutive grid nodes.
#[derive(Clone, Debug)]
pub struct WindowRule {
    lo: usize,
    hi: usize,
    weights: Vec<Option<(usize, [f64; 4], usize)>>,
}

impl WindowRule {
    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    /// `∫_{x_i}^{x_hi} f` for `i = lo..=hi`, indexed from zero. `f` is
    /// indexed by global node number.
    pub fn cumulative_from_end<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
    {
        let n = self.hi - self.lo + 1;
        let mut out = alloc::vec![T::default(); n];
        for i in (0..n - 1).rev() {
            let v = match self.weights[i] {
                None => T::default(),
                Some((first, w, width)) => {
                    let mut acc = T::default();
                    for k in 0..width {
                        acc = acc + f[first + k] * w[k];
                    }
                    acc
                }
            };
            out[i] = out[i + 1] + v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;

    #[test]
    fn uniform_grid_integrates_smooth_functions() {
        let g = Grid::new(0.0, PI, 256, 3, &[]);
        assert_eq!(g.len(), 3 * 256 + 1);
        assert!((g.x_end() - 3.0 * PI).abs() < 1e-14);
        let f: Vec<f64> = g.nodes().iter().map(|n| libm::sin(n.x)).collect();
        assert!((g.integrate(&f) - 2.0).abs() < 1e-8);
        let cells = g.cell_integrals(&f);
        assert!((cells[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn breakpoints_are_duplicated() {
        let g = Grid::new(0.0, 1.0, 10, 4, &[2.05, 3.0]);
        let dup: Vec<&Node> = g.nodes().iter().filter(|n| n.side != Side::Both).collect();
        assert_eq!(dup.len(), 4);
        assert_eq!(dup[0].x, 2.05);
        assert_eq!(dup[2].x, 3.0);
        assert_eq!(g.pieces().len(), 3);
        // step function integrates exactly
        let f: Vec<f64> = (0..g.len()).map(|i| if g.eval_point(i) < 2.05 { 1.0 } else { 3.0 }).collect();
        assert!((g.integrate(&f) - (2.05 + 3.0 * 1.95)).abs() < 1e-13);
        let cum = g.cumulative_from_end(&f);
        assert!((cum[0] - g.integrate(&f)).abs() < 1e-13);
        let whole = g.window(0, g.len() - 1).cumulative_from_end(&f);
        assert_eq!(whole, cum);
        let mid = g.len() / 2;
        let right = g.window(mid, g.len() - 1).cumulative_from_end(&f);
        assert!((right[0] - cum[mid]).abs() < 1e-13);
    }

    #[test]
    fn residues_reconstruct_positions() {
        let g = Grid::new(0.5, 2.0, 8, 3, &[1.3, 4.9]);
        for n in g.nodes() {
            let x = 0.5 + n.period as f64 * 2.0 + g.residues()[n.residue];
            assert!((x - n.x).abs() < 1e-13);
        }
    }
}
