//! Resampling through the deformation `x + u(x)`.
//!
//! Sample locations that fall outside the grid are clamped to the boundary
//! (border replication). Along a clamped axis the interpolant is constant, so
//! its derivative with respect to the displacement is zero there.

use rayon::prelude::*;

use crate::error::Result;
use crate::types::{DisplacementField, Dims, LabelMap, Volume};

#[inline]
fn axis_weights(y: f64, n: usize) -> (usize, f64, f64) {
    // Returns (lower index, fraction toward upper, d(fraction)/dy).
    let hi = (n - 1) as f64;
    let inside = (0.0..=hi).contains(&y);
    let yc = y.clamp(0.0, hi);
    let i0 = (yc.floor() as usize).min(n - 2);
    let t = yc - i0 as f64;
    (i0, t, if inside { 1.0 } else { 0.0 })
}

/// Trilinear sample of `data` at continuous voxel coordinates `y`, with the
/// spatial derivative of the interpolant.
#[inline]
pub fn sample_trilinear(data: &[f64], dims: Dims, y: [f64; 3]) -> (f64, [f64; 3]) {
    let (x0, tx, gx) = axis_weights(y[0], dims.nx());
    let (y0, ty, gy) = axis_weights(y[1], dims.ny());
    let (z0, tz, gz) = axis_weights(y[2], dims.nz());
    let wx = [1.0 - tx, tx];
    let wy = [1.0 - ty, ty];
    let wz = [1.0 - tz, tz];
    let dx = [-gx, gx];
    let dy = [-gy, gy];
    let dz = [-gz, gz];
    let mut v = 0.0;
    let mut g = [0.0; 3];
    for c in 0..2 {
        for b in 0..2 {
            for a in 0..2 {
                let s = data[dims.index(x0 + a, y0 + b, z0 + c)];
                v += wx[a] * wy[b] * wz[c] * s;
                g[0] += dx[a] * wy[b] * wz[c] * s;
                g[1] += wx[a] * dy[b] * wz[c] * s;
                g[2] += wx[a] * wy[b] * dz[c] * s;
            }
        }
    }
    (v, g)
}

fn sample_location(dims: Dims, i: usize, d: &[f64; 3]) -> [f64; 3] {
    let c = dims.coords(i);
    [c[0] as f64 + d[0], c[1] as f64 + d[1], c[2] as f64 + d[2]]
}

/// `out(x) = m(x + u(x))`.
pub fn warp_trilinear(m: &Volume, u: &DisplacementField) -> Result<Volume> {
    let dims = m.dims();
    dims.check_same(&u.dims())?;
    let data = u
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(i, d)| sample_trilinear(m.data(), dims, sample_location(dims, i, d)).0)
        .collect();
    Volume::new(dims, m.spacing(), data)
}

/// Warped volume together with the moving-image gradient at each sample
/// location, i.e. `d out(x) / d u(x)`.
pub fn warp_trilinear_with_gradient(
    m: &Volume,
    u: &DisplacementField,
) -> Result<(Volume, Vec<[f64; 3]>)> {
    let dims = m.dims();
    dims.check_same(&u.dims())?;
    let (data, grad): (Vec<f64>, Vec<[f64; 3]>) = u
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(i, d)| sample_trilinear(m.data(), dims, sample_location(dims, i, d)))
        .unzip();
    Ok((Volume::new(dims, m.spacing(), data)?, grad))
}

/// Nearest-neighbor label resampling. Half-voxel ties go to the larger index.
pub fn warp_labels(l: &LabelMap, u: &DisplacementField) -> Result<LabelMap> {
    let dims = l.dims();
    dims.check_same(&u.dims())?;
    let src = l.labels();
    let labels = u
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let y = sample_location(dims, i, d);
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let hi = (dims.0[a] - 1) as f64;
                idx[a] = (y[a] + 0.5).floor().clamp(0.0, hi) as usize;
            }
            src[dims.index(idx[0], idx[1], idx[2])]
        })
        .collect();
    let mut out = LabelMap::new(dims, labels)?;
    out.label_names = l.label_names.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::identity_displacement;

    fn constant_field(dims: Dims, v: [f64; 3]) -> DisplacementField {
        DisplacementField::from_fn(dims, |_, _, _| v).unwrap()
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let d = Dims::new(5, 4, 3).unwrap();
        let m = Volume::from_fn(d, [1.0; 3], |x, y, z| ((x * 31 + y * 7 + z) as f64).sin() * 1e3).unwrap();
        let w = warp_trilinear(&m, &identity_displacement(d).unwrap()).unwrap();
        assert_eq!(w.data(), m.data());
    }

    #[test]
    fn ramp_shift_by_one() {
        let d = Dims::new(5, 5, 5).unwrap();
        let m = Volume::from_fn(d, [1.0; 3], |x, _, _| x as f64).unwrap();
        let w = warp_trilinear(&m, &constant_field(d, [1.0, 0.0, 0.0])).unwrap();
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..4 {
                    assert_eq!(w.at(x, y, z), x as f64 + 1.0);
                }
                // clamped at the far face
                assert_eq!(w.at(4, y, z), 4.0);
            }
        }
    }

    #[test]
    fn half_voxel_spike() {
        let d = Dims::new(5, 5, 5).unwrap();
        let m = Volume::from_fn(d, [1.0; 3], |x, y, z| if (x, y, z) == (2, 2, 2) { 1.0 } else { 0.0 })
            .unwrap();
        let w = warp_trilinear(&m, &constant_field(d, [0.5, 0.0, 0.0])).unwrap();
        assert_eq!(w.at(1, 2, 2), 0.5);
        assert_eq!(w.at(2, 2, 2), 0.5);
        assert_eq!(w.at(3, 2, 2), 0.0);
        assert_eq!(w.at(1, 1, 2), 0.0);
    }

    #[test]
    fn trilinear_exact_on_trilinear_functions() {
        let d = Dims::new(6, 6, 6).unwrap();
        let f = |x: f64, y: f64, z: f64| 0.3 + 1.1 * x - 0.7 * y + 0.25 * z;
        let m = Volume::from_fn(d, [1.0; 3], |x, y, z| f(x as f64, y as f64, z as f64)).unwrap();
        let shift = [0.37, -0.61, 1.2];
        let w = warp_trilinear(&m, &constant_field(d, shift)).unwrap();
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let p = [x as f64 + shift[0], y as f64 + shift[1], z as f64 + shift[2]];
                    if p.iter().all(|&c| (0.0..=5.0).contains(&c)) {
                        assert!((w.at(x, y, z) - f(p[0], p[1], p[2])).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sample_gradient_matches_finite_difference() {
        let d = Dims::new(5, 6, 4).unwrap();
        let m = Volume::from_fn(d, [1.0; 3], |x, y, z| ((x * x + 3 * y + 5 * z * x) as f64 * 0.1).cos()).unwrap();
        let y = [1.3, 2.71, 1.45];
        let (_, g) = sample_trilinear(m.data(), d, y);
        let h = 1e-6;
        for a in 0..3 {
            let mut p = y;
            let mut q = y;
            p[a] += h;
            q[a] -= h;
            let fd = (sample_trilinear(m.data(), d, p).0 - sample_trilinear(m.data(), d, q).0) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch() {
        let m = Volume::new(Dims([2, 2, 2]), [1.0; 3], vec![0.0; 8]).unwrap();
        let u = identity_displacement(Dims([2, 2, 3])).unwrap();
        assert!(warp_trilinear(&m, &u).unwrap_err().to_string().contains("shape mismatch"));
    }

    #[test]
    fn labels_identity_and_shifts() {
        let d = Dims::new(5, 4, 3).unwrap();
        let labels: Vec<u32> = (0..d.len()).map(|i| (i % 7) as u32).collect();
        let l = LabelMap::new(d, labels).unwrap();
        assert_eq!(warp_labels(&l, &identity_displacement(d).unwrap()).unwrap(), l);
        assert_eq!(warp_labels(&l, &constant_field(d, [0.4, 0.0, 0.0])).unwrap(), l);

        let shifted = warp_labels(&l, &constant_field(d, [1.0, 0.0, 0.0])).unwrap();
        for z in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(
                        shifted.labels()[d.index(x, y, z)],
                        l.labels()[d.index(x + 1, y, z)]
                    );
                }
            }
        }
        // 0.5 tie rounds to the larger index.
        let tie = warp_labels(&l, &constant_field(d, [0.5, 0.0, 0.0])).unwrap();
        assert_eq!(tie.labels()[d.index(0, 0, 0)], l.labels()[d.index(1, 0, 0)]);
    }
}
