//! One-dimensional finite-difference stencils applied along a grid axis,
//! together with their exact adjoints.
//!
//! Every differential energy in the crate is a function of these linear
//! operators, so the analytic gradient of `E(Du)` is `D^T (dE/dDu)`. The
//! adjoint here is assembled tap-by-tap from the forward stencil, which keeps
//! the pair consistent at the boundary faces.

use rayon::prelude::*;

use crate::types::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisOp {
    /// First derivative: central in the interior, one-sided first order at the faces.
    First,
    /// Second derivative: three-point central; faces reuse the nearest interior stencil.
    Second,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps {
    len: usize,
    taps: [(isize, f64); 3],
}

impl Taps {
    fn iter(&self) -> impl Iterator<Item = &(isize, f64)> {
        self.taps[..self.len].iter()
    }
}

impl AxisOp {
    /// Offsets and weights for output position `p` on a line of `n` samples.
    pub(crate) fn taps(self, p: usize, n: usize, h: f64) -> Taps {
        let mut t = Taps {
            len: 0,
            taps: [(0, 0.0); 3],
        };
        match self {
            AxisOp::First => {
                if n < 2 {
                    return t;
                }
                let inv = 1.0 / h;
                t.len = 2;
                t.taps[..2].copy_from_slice(&if p == 0 {
                    [(0, -inv), (1, inv)]
                } else if p + 1 == n {
                    [(-1, -inv), (0, inv)]
                } else {
                    [(-1, -0.5 * inv), (1, 0.5 * inv)]
                });
            }
            AxisOp::Second => {
                if n < 3 {
                    return t;
                }
                let inv2 = 1.0 / (h * h);
                let c = p.clamp(1, n - 2) as isize;
                let p = p as isize;
                t.len = 3;
                t.taps = [(c - 1 - p, inv2), (c - p, -2.0 * inv2), (c + 1 - p, inv2)];
            }
        }
        t
    }
}

/// `out = D_axis(input)`.
pub fn apply(op: AxisOp, axis: usize, dims: Dims, h: f64, input: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), dims.len());
    let n = dims.0[axis];
    let stride = dims.stride(axis) as isize;
    let slab = dims.nx() * dims.ny();
    let mut out = vec![0.0; dims.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(z, chunk)| {
        for (k, o) in chunk.iter_mut().enumerate() {
            let i = z * slab + k;
            let p = dims.coords(i)[axis];
            let mut acc = 0.0;
            for &(off, w) in op.taps(p, n, h).iter() {
                acc += w * input[(i as isize + off * stride) as usize];
            }
            *o = acc;
        }
    });
    out
}

/// `out = D_axis^T(input)`, evaluated in gather form so it parallelizes like `apply`.
pub fn apply_transpose(op: AxisOp, axis: usize, dims: Dims, h: f64, input: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), dims.len());
    let n = dims.0[axis];
    let stride = dims.stride(axis) as isize;
    let slab = dims.nx() * dims.ny();
    let mut out = vec![0.0; dims.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(z, chunk)| {
        for (k, o) in chunk.iter_mut().enumerate() {
            let q = z * slab + k;
            let pq = dims.coords(q)[axis] as isize;
            let mut acc = 0.0;
            // Widest stencil reaches two samples away (clamped second derivative).
            for ps in (pq - 2).max(0)..=(pq + 2).min(n as isize - 1) {
                let src = (q as isize + (ps - pq) * stride) as usize;
                for &(off, w) in op.taps(ps as usize, n, h).iter() {
                    if ps + off == pq {
                        acc += w * input[src];
                    }
                }
            }
            *o = acc;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn adjoint_identity_holds() {
        // <D a, b> == <a, D^T b> for every axis, operator and small extents.
        for dims in [[2, 3, 4], [5, 4, 3], [3, 2, 6], [7, 7, 7]] {
            let d = Dims(dims);
            let a = lcg(1, d.len());
            let b = lcg(2, d.len());
            for op in [AxisOp::First, AxisOp::Second] {
                for axis in 0..3 {
                    let h = 0.7 + axis as f64 * 0.4;
                    let lhs = dot(&apply(op, axis, d, h, &a), &b);
                    let rhs = dot(&a, &apply_transpose(op, axis, d, h, &b));
                    assert!((lhs - rhs).abs() < 1e-12, "{op:?} axis {axis} dims {dims:?}");
                }
            }
        }
    }

    #[test]
    fn first_derivative_exact_on_linear() {
        let d = Dims([5, 4, 3]);
        let f: Vec<f64> = (0..d.len()).map(|i| 0.3 * d.coords(i)[1] as f64 + 2.0).collect();
        let g = apply(AxisOp::First, 1, d, 1.0, &f);
        assert!(g.iter().all(|v| (v - 0.3).abs() < 1e-12));
        let g = apply(AxisOp::First, 0, d, 1.0, &f);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn second_derivative_exact_on_quadratic() {
        let d = Dims([6, 3, 3]);
        let f: Vec<f64> = (0..d.len())
            .map(|i| {
                let x = d.coords(i)[0] as f64;
                1.5 * x * x - x
            })
            .collect();
        let g = apply(AxisOp::Second, 0, d, 1.0, &f);
        assert!(g.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }
}
