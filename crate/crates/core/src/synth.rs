//! Synthetic registration pairs with known ground-truth deformation.
//!
//! Convention: the fixed image is the moving image resampled through the
//! ground truth, `fixed = warp(moving, u_gt)`, so registering moving onto
//! fixed should return approximately `u_gt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{deformation_jacobian_det, displacement_jacobian};
use crate::types::{norm3, DisplacementField, Dims, LabelMap, Volume};
use crate::warp::{warp_labels, warp_trilinear};

pub const MAX_ATTEMPTS: usize = 20;
/// Every generated ground truth satisfies `min det(I + grad u) > MIN_DET`.
pub const MIN_DET: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeformationKind {
    GaussianBumps { count: usize, max_amplitude: f64, sigma: f64 },
    Dilation { s: f64 },
    Translation { t: [f64; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TextureKind {
    BlobPhantom { n_blobs: usize },
    Ramp,
    Checkerboard { period: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelKind {
    ConcentricSpheres { k: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub seed: u64,
    pub deformation: DeformationKind,
    pub texture: TextureKind,
    pub labels: LabelKind,
}

impl SynthSpec {
    /// Smooth-bump pair on a blob phantom: the standard recovery benchmark.
    pub fn bumps(n: usize, seed: u64, max_amplitude: f64, sigma: f64) -> Self {
        SynthSpec {
            dims: [n; 3],
            seed,
            deformation: DeformationKind::GaussianBumps { count: 4, max_amplitude, sigma },
            texture: TextureKind::BlobPhantom { n_blobs: 48 },
            labels: LabelKind::ConcentricSpheres { k: 3 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        Dims(self.dims).validate()?;
        match self.deformation {
            DeformationKind::GaussianBumps { count, max_amplitude, sigma } => {
                if !(max_amplitude >= 0.0 && max_amplitude.is_finite()) {
                    return Err(Error::InvalidParameter("max_amplitude must be >= 0".into()));
                }
                if !(sigma > 0.0) {
                    return Err(Error::InvalidParameter("sigma must be > 0".into()));
                }
                if count == 0 {
                    return Err(Error::InvalidParameter("bump count must be >= 1".into()));
                }
            }
            DeformationKind::Dilation { s } if !s.is_finite() => {
                return Err(Error::InvalidParameter("dilation must be finite".into()))
            }
            DeformationKind::Translation { t } if t.iter().any(|c| !c.is_finite()) => {
                return Err(Error::InvalidParameter("translation must be finite".into()))
            }
            _ => {}
        }
        match self.texture {
            TextureKind::BlobPhantom { n_blobs: 0 } => {
                Err(Error::InvalidParameter("n_blobs must be >= 1".into()))
            }
            TextureKind::Checkerboard { period: 0 } => {
                Err(Error::InvalidParameter("checkerboard period must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    pub fixed: Volume,
    pub moving: Volume,
    pub u_gt: DisplacementField,
    pub labels_fixed: LabelMap,
    pub labels_moving: LabelMap,
}

pub fn make_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let dims = Dims(spec.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let moving = texture(dims, spec.texture, &mut rng)?;
    let labels_moving = labels(dims, spec.labels)?;

    let mut worst = f64::INFINITY;
    let mut u_gt = None;
    for _ in 0..MAX_ATTEMPTS {
        let u = deformation(dims, spec.deformation, &mut rng)?;
        let min_det = min_det(&u);
        if min_det > MIN_DET {
            u_gt = Some(u);
            break;
        }
        worst = worst.min(min_det);
    }
    let u_gt = u_gt.ok_or(Error::FoldFreeExhausted {
        attempts: MAX_ATTEMPTS,
        min_det: worst,
    })?;
    let fixed = warp_trilinear(&moving, &u_gt)?;
    let labels_fixed = warp_labels(&labels_moving, &u_gt)?;
    Ok(SynthPair {
        fixed,
        moving,
        u_gt,
        labels_fixed,
        labels_moving,
    })
}

pub fn min_det(u: &DisplacementField) -> f64 {
    deformation_jacobian_det(&displacement_jacobian(u, [1.0; 3]))
        .values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn texture(dims: Dims, kind: TextureKind, rng: &mut ChaCha8Rng) -> Result<Volume> {
    let sp = [1.0; 3];
    match kind {
        TextureKind::Ramp => {
            let denom = (dims.nx() + dims.ny() + dims.nz() - 3) as f64;
            Volume::from_fn(dims, sp, |x, y, z| (x + y + z) as f64 / denom)
        }
        TextureKind::Checkerboard { period } => Volume::from_fn(dims, sp, |x, y, z| {
            ((x / period + y / period + z / period) % 2) as f64
        }),
        TextureKind::BlobPhantom { n_blobs } => {
            let blobs: Vec<([f64; 3], f64, f64)> = (0..n_blobs)
                .map(|_| {
                    let c = [0, 1, 2].map(|a| rng.gen_range(0.0..(dims.0[a] - 1) as f64));
                    let r = rng.gen_range(1.5..4.0);
                    let amp = rng.gen_range(0.3..1.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 };
                    (c, r, amp)
                })
                .collect();
            let raw = Volume::from_fn(dims, sp, |x, y, z| {
                let p = [x as f64, y as f64, z as f64];
                blobs
                    .iter()
                    .map(|(c, r, a)| {
                        let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                        a * (-d2 / (2.0 * r * r)).exp()
                    })
                    .sum()
            })?;
            crate::types::normalize_intensity(&raw)
        }
    }
}

fn labels(dims: Dims, kind: LabelKind) -> Result<LabelMap> {
    let LabelKind::ConcentricSpheres { k } = kind;
    let center = dims.0.map(|n| (n - 1) as f64 / 2.0);
    let outer = 0.45 * dims.0.iter().copied().min().unwrap_or(0) as f64;
    let shell = outer / k.max(1) as f64;
    let labels = (0..dims.len())
        .map(|i| {
            let c = dims.coords(i);
            let r = (0..3).map(|a| (c[a] as f64 - center[a]).powi(2)).sum::<f64>().sqrt();
            if r < outer {
                (r / shell).floor() as u32 + 1
            } else {
                0
            }
        })
        .collect();
    LabelMap::new(dims, labels)
}

/// Per-axis window that is ~1 in the middle and 0 on the faces.
fn taper(p: usize, n: usize) -> f64 {
    let t = 2.0 * p as f64 / (n - 1) as f64 - 1.0;
    1.0 - t.powi(8)
}

fn deformation(dims: Dims, kind: DeformationKind, rng: &mut ChaCha8Rng) -> Result<DisplacementField> {
    match kind {
        DeformationKind::Translation { t } => DisplacementField::from_fn(dims, |_, _, _| t),
        DeformationKind::Dilation { s } => {
            let c = dims.0.map(|n| (n - 1) as f64 / 2.0);
            DisplacementField::from_fn(dims, |x, y, z| {
                [s * (x as f64 - c[0]), s * (y as f64 - c[1]), s * (z as f64 - c[2])]
            })
        }
        DeformationKind::GaussianBumps { count, max_amplitude, sigma } => {
            let bumps: Vec<([f64; 3], [f64; 3])> = (0..count)
                .map(|_| {
                    let c = [0, 1, 2].map(|a| {
                        let n = (dims.0[a] - 1) as f64;
                        rng.gen_range(0.3 * n..=0.7 * n)
                    });
                    let mut d = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
                    let len = norm3(&d).max(1e-9);
                    let w = rng.gen_range(0.5..1.0);
                    d.iter_mut().for_each(|v| *v *= w / len);
                    (c, d)
                })
                .collect();
            let raw = DisplacementField::from_fn(dims, |x, y, z| {
                let p = [x as f64, y as f64, z as f64];
                let win = taper(x, dims.nx()) * taper(y, dims.ny()) * taper(z, dims.nz());
                let mut v = [0.0; 3];
                for (c, d) in &bumps {
                    let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                    let g = win * (-d2 / (2.0 * sigma * sigma)).exp();
                    for k in 0..3 {
                        v[k] += g * d[k];
                    }
                }
                v
            })?;
            let peak = raw.max_norm();
            let scale = if peak > 0.0 { max_amplitude / peak } else { 0.0 };
            DisplacementField::new(
                dims,
                raw.vectors().iter().map(|v| v.map(|c| c * scale)).collect(),
            )
        }
    }
}

/// Mean and max Euclidean endpoint error over `mask` (all voxels when `None`).
pub fn endpoint_error(
    u_est: &DisplacementField,
    u_gt: &DisplacementField,
    mask: Option<&[bool]>,
) -> Result<(f64, f64)> {
    u_est.dims().check_same(&u_gt.dims())?;
    if let Some(m) = mask {
        if m.len() != u_est.dims().len() {
            return Err(Error::LengthMismatch {
                dims: u_est.dims().0,
                expected: u_est.dims().len(),
                actual: m.len(),
            });
        }
    }
    let errs: Vec<f64> = u_est
        .vectors()
        .iter()
        .zip(u_gt.vectors())
        .enumerate()
        .filter(|(i, _)| mask.map_or(true, |m| m[*i]))
        .map(|(_, (a, b))| norm3(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
        .collect();
    if errs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let max = errs.iter().copied().fold(0.0, f64::max);
    Ok((crate::types::mean(&errs), max))
}

/// Voxels with a non-background label.
pub fn foreground_mask(labels: &LabelMap) -> Vec<bool> {
    labels.labels().iter().map(|&l| l > 0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_gives_identical_pair() {
        let p = make_pair(&SynthSpec::bumps(16, 3, 0.0, 4.0)).unwrap();
        assert_eq!(p.fixed, p.moving);
        assert!(p.u_gt.vectors().iter().all(|v| *v == [0.0; 3]));
        assert_eq!(p.labels_fixed, p.labels_moving);
    }

    #[test]
    fn translation_shifts_the_texture() {
        let spec = SynthSpec {
            deformation: DeformationKind::Translation { t: [1.0, 0.0, 0.0] },
            ..SynthSpec::bumps(10, 1, 0.0, 1.0)
        };
        let p = make_pair(&spec).unwrap();
        let d = p.fixed.dims();
        for z in 0..10 {
            for y in 0..10 {
                for x in 0..9 {
                    assert_eq!(p.fixed.at(x, y, z), p.moving.at(x + 1, y, z));
                }
            }
        }
        assert!(p.u_gt.vectors().iter().all(|v| *v == [1.0, 0.0, 0.0]));
        assert_eq!(d, Dims([10; 3]));
    }

    #[test]
    fn seed7_bumps_are_fold_free_and_bounded() {
        let p = make_pair(&SynthSpec::bumps(32, 7, 3.0, 6.0)).unwrap();
        assert!(min_det(&p.u_gt) > MIN_DET);
        assert!(p.u_gt.max_norm() <= 3.0 + 1e-12);
        assert!(p.u_gt.max_norm() > 2.9);
    }

    #[test]
    fn reproducible_and_consistent() {
        let spec = SynthSpec::bumps(12, 42, 2.0, 3.0);
        let a = make_pair(&spec).unwrap();
        let b = make_pair(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(warp_trilinear(&a.moving, &a.u_gt).unwrap(), a.fixed);
    }

    #[test]
    fn unreachable_bound_is_reported() {
        let spec = SynthSpec {
            deformation: DeformationKind::Dilation { s: -0.5 },
            ..SynthSpec::bumps(8, 0, 1.0, 1.0)
        };
        let err = make_pair(&spec).unwrap_err();
        assert!(err.to_string().contains("could not satisfy fold-free bound; reduce amplitude"));
    }

    #[test]
    fn endpoint_error_examples() {
        let d = Dims([4; 3]);
        let gt = DisplacementField::from_fn(d, |x, y, _| [x as f64 * 0.1, y as f64, 0.0]).unwrap();
        assert_eq!(endpoint_error(&gt, &gt, None).unwrap(), (0.0, 0.0));
        let off = DisplacementField::new(d, gt.vectors().iter().map(|v| [v[0] + 0.3, v[1], v[2]]).collect()).unwrap();
        let (m, x) = endpoint_error(&off, &gt, None).unwrap();
        assert!((m - 0.3).abs() < 1e-12 && (x - 0.3).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let unit = DisplacementField::new(
            d,
            gt.vectors()
                .iter()
                .map(|v| {
                    let mut e = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
                    let l = norm3(&e);
                    e.iter_mut().for_each(|c| *c /= l);
                    [v[0] + e[0], v[1] + e[1], v[2] + e[2]]
                })
                .collect(),
        )
        .unwrap();
        let (m, _) = endpoint_error(&unit, &gt, None).unwrap();
        assert!((m - 1.0).abs() < 1e-9);
    }
}
