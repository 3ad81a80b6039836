//! Image similarity energies between a fixed volume `f` and a warped moving
//! volume `w`. Every loss is "lower is better" and can also return its
//! gradient with respect to the samples of `w`, which the optimizer chains
//! through the warp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{mean, pairwise_sum, Dims, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Lncc,
    #[serde(rename = "mi")]
    LocalMi,
    Ssd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub kind: SimilarityKind,
    /// Window radius in voxels (LNCC window, MI block).
    pub window_radius: usize,
    /// Histogram bins per axis for local MI.
    pub mi_bins: usize,
    /// Variance-stabilizing constant for LNCC.
    pub epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self::lncc()
    }
}

impl SimilarityConfig {
    pub fn lncc() -> Self {
        SimilarityConfig {
            kind: SimilarityKind::Lncc,
            window_radius: 3,
            mi_bins: 32,
            epsilon: 1e-5,
        }
    }

    pub fn local_mi() -> Self {
        SimilarityConfig {
            kind: SimilarityKind::LocalMi,
            window_radius: 8,
            ..Self::lncc()
        }
    }

    pub fn ssd() -> Self {
        SimilarityConfig {
            kind: SimilarityKind::Ssd,
            ..Self::lncc()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidParameter("window_radius must be >= 1".into()));
        }
        if self.mi_bins < 4 {
            return Err(Error::InvalidParameter("mi_bins must be >= 4".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Loss value and `d loss / d w`.
pub fn similarity_with_gradient(f: &Volume, w: &Volume, cfg: &SimilarityConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    f.dims().check_same(&w.dims())?;
    Ok(match cfg.kind {
        SimilarityKind::Lncc => lncc_impl(f, w, cfg, true),
        SimilarityKind::LocalMi => local_mi_impl(f, w, cfg, true),
        SimilarityKind::Ssd => ssd_impl(f, w, true),
    })
}

pub fn similarity(f: &Volume, w: &Volume, cfg: &SimilarityConfig) -> Result<f64> {
    cfg.validate()?;
    f.dims().check_same(&w.dims())?;
    Ok(match cfg.kind {
        SimilarityKind::Lncc => lncc_impl(f, w, cfg, false).0,
        SimilarityKind::LocalMi => local_mi_impl(f, w, cfg, false).0,
        SimilarityKind::Ssd => ssd_impl(f, w, false).0,
    })
}

pub fn lncc_loss(f: &Volume, w: &Volume, cfg: &SimilarityConfig) -> Result<f64> {
    similarity(f, w, &SimilarityConfig { kind: SimilarityKind::Lncc, ..*cfg })
}

pub fn local_mi_loss(f: &Volume, w: &Volume, cfg: &SimilarityConfig) -> Result<f64> {
    similarity(f, w, &SimilarityConfig { kind: SimilarityKind::LocalMi, ..*cfg })
}

pub fn ssd_loss(f: &Volume, w: &Volume) -> Result<f64> {
    f.dims().check_same(&w.dims())?;
    Ok(ssd_impl(f, w, false).0)
}

fn ssd_impl(f: &Volume, w: &Volume, want_grad: bool) -> (f64, Vec<f64>) {
    let n = f.data().len() as f64;
    let sq: Vec<f64> = f.data().iter().zip(w.data()).map(|(a, b)| (a - b) * (a - b)).collect();
    let grad = if want_grad {
        f.data().iter().zip(w.data()).map(|(a, b)| 2.0 * (b - a) / n).collect()
    } else {
        Vec::new()
    };
    (mean(&sq), grad)
}

/// Sum over the cubic window of radius `r` centered at every voxel, with the
/// window clipped to the grid.
pub(crate) fn box_sum(values: &[f64], dims: Dims, r: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let n = dims.0[axis];
        let stride = dims.stride(axis);
        let mut out = vec![0.0; cur.len()];
        for start in line_starts(dims, axis) {
            prefix.clear();
            prefix.push(0.0);
            let mut acc = 0.0;
            for p in 0..n {
                acc += cur[start + p * stride];
                prefix.push(acc);
            }
            for p in 0..n {
                let lo = p.saturating_sub(r);
                let hi = (p + r).min(n - 1);
                out[start + p * stride] = prefix[hi + 1] - prefix[lo];
            }
        }
        cur = out;
    }
    cur
}

/// Flat index of the first sample of every line along `axis`.
pub(crate) fn line_starts(dims: Dims, axis: usize) -> Vec<usize> {
    let [nx, ny, nz] = dims.0;
    let mut v = Vec::new();
    match axis {
        0 => {
            for z in 0..nz {
                for y in 0..ny {
                    v.push(dims.index(0, y, z));
                }
            }
        }
        1 => {
            for z in 0..nz {
                for x in 0..nx {
                    v.push(dims.index(x, 0, z));
                }
            }
        }
        _ => {
            for y in 0..ny {
                for x in 0..nx {
                    v.push(dims.index(x, y, 0));
                }
            }
        }
    }
    v
}

fn window_counts(dims: Dims, r: usize) -> Vec<f64> {
    let extent = |p: usize, n: usize| ((p + r).min(n - 1) - p.saturating_sub(r) + 1) as f64;
    (0..dims.len())
        .map(|i| {
            let c = dims.coords(i);
            (0..3).map(|a| extent(c[a], dims.0[a])).product()
        })
        .collect()
}

/// Windowed squared correlation. Per window:
///
/// `R = (|cov| + eps)^2 / ((var_f + eps) (var_w + eps))`, loss `= 1 - mean(R)`.
///
/// `R` is bounded by 1 and equals 1 exactly when `w = f` or `w = 1 - f` on the
/// window, including flat windows. A flat `w` against a textured `f` scores
/// near zero.
fn lncc_impl(f: &Volume, w: &Volume, cfg: &SimilarityConfig, want_grad: bool) -> (f64, Vec<f64>) {
    let dims = f.dims();
    let r = cfg.window_radius;
    let eps = cfg.epsilon;
    let fd = f.data();
    let wd = w.data();
    let cnt = window_counts(dims, r);
    let sf = box_sum(fd, dims, r);
    let sw = box_sum(wd, dims, r);
    let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
    let sff = box_sum(&sq(fd, fd), dims, r);
    let sww = box_sum(&sq(wd, wd), dims, r);
    let sfw = box_sum(&sq(fd, wd), dims, r);

    let n_vox = dims.len();
    let mut ratio = vec![0.0; n_vox];
    let (mut ca, mut cb, mut cc) = if want_grad {
        (vec![0.0; n_vox], vec![0.0; n_vox], vec![0.0; n_vox])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n_vox {
        let n = cnt[i];
        let mf = sf[i] / n;
        let mw = sw[i] / n;
        let cov = sfw[i] / n - mf * mw;
        let vf = (sff[i] / n - mf * mf).max(0.0) + eps;
        let vw = (sww[i] / n - mw * mw).max(0.0) + eps;
        let num = cov.abs() + eps;
        let den = vf * vw;
        let rr = num * num / den;
        ratio[i] = rr;
        if want_grad {
            let a = 2.0 * num * cov.signum() * (cov != 0.0) as u8 as f64 / (den * n);
            let b = -2.0 * rr / (vw * n);
            ca[i] = a;
            cb[i] = b;
            cc[i] = -a * mf - b * mw;
        }
    }
    let loss = 1.0 - mean(&ratio);
    if !want_grad {
        return (loss, Vec::new());
    }
    // Windows are symmetric under clipping: y is in W(x) iff x is in W(y).
    let sa = box_sum(&ca, dims, r);
    let sb = box_sum(&cb, dims, r);
    let sc = box_sum(&cc, dims, r);
    let inv = 1.0 / n_vox as f64;
    let grad = (0..n_vox)
        .map(|y| -inv * (sa[y] * fd[y] + sb[y] * wd[y] + sc[y]))
        .collect();
    (loss, grad)
}

/// Linear (triangular) Parzen assignment of an intensity to two adjacent bins:
/// lower bin, weight of the upper bin, and d(weight)/d(intensity).
#[inline]
fn parzen(v: f64, bins: usize) -> (usize, f64, f64) {
    let scale = (bins - 1) as f64;
    let inside = v > 0.0 && v < 1.0;
    let t = v.clamp(0.0, 1.0) * scale;
    let i0 = (t.floor() as usize).min(bins - 2);
    (i0, t - i0 as f64, if inside { scale } else { 0.0 })
}

#[inline]
fn ln0(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        0.0
    }
}

/// Block centers along one axis: 0, r, 2r, ... (< n).
fn block_centers(n: usize, r: usize) -> Vec<usize> {
    (0..n).step_by(r).collect()
}

/// Negative mutual information averaged over overlapping blocks of radius
/// `r`, strided by `r`.
fn local_mi_impl(f: &Volume, w: &Volume, cfg: &SimilarityConfig, want_grad: bool) -> (f64, Vec<f64>) {
    let dims = f.dims();
    let r = cfg.window_radius;
    let bins = cfg.mi_bins;
    let fd = f.data();
    let wd = w.data();
    let centers: Vec<Vec<usize>> = (0..3).map(|a| block_centers(dims.0[a], r)).collect();
    let mut mis = Vec::new();
    let mut grad = if want_grad { vec![0.0; dims.len()] } else { Vec::new() };
    let mut joint = vec![0.0; bins * bins];
    let mut members = Vec::new();

    for &cz in &centers[2] {
        for &cy in &centers[1] {
            for &cx in &centers[0] {
                let range = |c: usize, n: usize| c.saturating_sub(r)..=(c + r).min(n - 1);
                members.clear();
                for z in range(cz, dims.nz()) {
                    for y in range(cy, dims.ny()) {
                        for x in range(cx, dims.nx()) {
                            members.push(dims.index(x, y, z));
                        }
                    }
                }
                joint.iter_mut().for_each(|v| *v = 0.0);
                for &i in &members {
                    let (fi, ft, _) = parzen(fd[i], bins);
                    let (wj, wt, _) = parzen(wd[i], bins);
                    let fw = [1.0 - ft, ft];
                    let ww = [1.0 - wt, wt];
                    for a in 0..2 {
                        for b in 0..2 {
                            joint[(fi + a) * bins + wj + b] += fw[a] * ww[b];
                        }
                    }
                }
                let n = members.len() as f64;
                let p: Vec<f64> = joint.iter().map(|h| h / n).collect();
                let pf: Vec<f64> = (0..bins).map(|i| pairwise_sum(&p[i * bins..(i + 1) * bins])).collect();
                let pw: Vec<f64> = (0..bins).map(|j| (0..bins).map(|i| p[i * bins + j]).sum()).collect();
                let mut mi = 0.0;
                for i in 0..bins {
                    for j in 0..bins {
                        let pij = p[i * bins + j];
                        if pij > 0.0 {
                            mi += pij * (pij / (pf[i] * pw[j])).ln();
                        }
                    }
                }
                mis.push(mi);
                if want_grad {
                    // dMI/dp_ij = ln p_ij - ln pf_i - ln pw_j - 1; only the w-bin
                    // split of each sample moves with w, so the pf and constant
                    // terms cancel between the two bins it touches.
                    for &i in &members {
                        let (fi, ft, _) = parzen(fd[i], bins);
                        let (wj, _, dwt) = parzen(wd[i], bins);
                        if dwt == 0.0 {
                            continue;
                        }
                        let fw = [1.0 - ft, ft];
                        let mut d = 0.0;
                        for a in 0..2 {
                            let row = (fi + a) * bins;
                            let g_hi = ln0(p[row + wj + 1]) - ln0(pw[wj + 1]);
                            let g_lo = ln0(p[row + wj]) - ln0(pw[wj]);
                            d += fw[a] * (g_hi - g_lo);
                        }
                        grad[i] += d * dwt / n;
                    }
                }
            }
        }
    }
    let nb = mis.len() as f64;
    let loss = -mean(&mis);
    if want_grad {
        grad.iter_mut().for_each(|g| *g *= -1.0 / nb);
    }
    (loss, grad)
}
