//! Evaluation metrics for a recovered deformation.
//!
//! Determinant statistics use `det(I + grad u)`: `pct_jac_ge1` counts
//! `det >= 1`, `pct_jac_le0` counts `det <= 0`, so the three bands
//! `[1, inf)`, `(0, 1)` and `(-inf, 0]` partition the grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field_ops::{deformation_jacobian_det, displacement_jacobian, frobenius_sq, symmetrize, trace};
use crate::regularizers::AdaptiveParams;
use crate::types::{mean, DisplacementField, LabelMap, ScalarField};
use crate::warp::warp_labels;

pub const HISTOGRAM_BINS: usize = 64;
pub const CURVE_POINTS: usize = 200;
/// Strain magnitude above which a voxel is flagged as highly strained.
pub const STRAIN_THRESHOLD: f64 = 1.0;

/// Uniform-bin histogram over `[lo, hi]`. An empty domain has no bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn empty() -> Self {
        Histogram { lo: 0.0, hi: 0.0, counts: Vec::new() }
    }

    /// Bins `values` over `[lo, hi]`; values equal to `hi` land in the last bin.
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        if values.is_empty() || bins == 0 {
            return Self::empty();
        }
        let mut counts = vec![0u64; bins];
        let width = hi - lo;
        for &v in values {
            let k = if width > 0.0 {
                (((v - lo) / width) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
            } else {
                0
            };
            counts[k] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub per_label: BTreeMap<u32, f64>,
    /// Mean over the labels present in the first (fixed) map; `None` when it
    /// has no foreground labels.
    pub mean: Option<f64>,
}

/// Dice per label present in either map, background label 0 excluded.
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<DiceScores> {
    a.dims().check_same(&b.dims())?;
    let mut ca: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cb: BTreeMap<u32, u64> = BTreeMap::new();
    let mut both: BTreeMap<u32, u64> = BTreeMap::new();
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        if la != 0 {
            *ca.entry(la).or_default() += 1;
        }
        if lb != 0 {
            *cb.entry(lb).or_default() += 1;
        }
        if la == lb && la != 0 {
            *both.entry(la).or_default() += 1;
        }
    }
    let mut per_label = BTreeMap::new();
    for &l in ca.keys().chain(cb.keys()) {
        let na = ca.get(&l).copied().unwrap_or(0);
        let nb = cb.get(&l).copied().unwrap_or(0);
        let nab = both.get(&l).copied().unwrap_or(0);
        per_label.insert(l, 2.0 * nab as f64 / (na + nb) as f64);
    }
    let fixed: Vec<f64> = ca.keys().map(|l| per_label[l]).collect();
    let mean = (!fixed.is_empty()).then(|| mean(&fixed));
    Ok(DiceScores { per_label, mean })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub pct_ge1: f64,
    pub pct_between: f64,
    pub pct_le0: f64,
    pub min_det: f64,
    pub neg_histogram: Histogram,
}

pub fn jacobian_determinants(u: &DisplacementField) -> ScalarField {
    deformation_jacobian_det(&displacement_jacobian(u, [1.0; 3]))
}

pub fn jacobian_stats(u: &DisplacementField) -> JacobianStats {
    let det = jacobian_determinants(u);
    let vals = det.values();
    let n = vals.len() as f64;
    let ge1 = vals.iter().filter(|&&d| d >= 1.0).count();
    let le0 = vals.iter().filter(|&&d| d <= 0.0).count();
    let between = vals.len() - ge1 - le0;
    let min_det = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let negative: Vec<f64> = vals.iter().copied().filter(|&d| d < 0.0).collect();
    let neg_histogram = if negative.is_empty() {
        Histogram::empty()
    } else {
        Histogram::build(&negative, min_det, 0.0, HISTOGRAM_BINS)
    };
    JacobianStats {
        pct_ge1: 100.0 * ge1 as f64 / n,
        pct_between: 100.0 * between as f64 / n,
        pct_le0: 100.0 * le0 as f64 / n,
        min_det,
        neg_histogram,
    }
}

/// Per-voxel `tr(eta)^2 + |eta|_F^2`, the elastic density with unit coefficients.
pub fn strain_energy_map(u: &DisplacementField) -> ScalarField {
    let j = displacement_jacobian(u, [1.0; 3]);
    let vals = j
        .matrices()
        .par_iter()
        .map(|m| {
            let e = symmetrize(m);
            let tr = trace(&e);
            tr * tr + frobenius_sq(&e)
        })
        .collect();
    ScalarField::new_unchecked(u.dims(), vals)
}

pub fn strain_energy_metric(u: &DisplacementField) -> f64 {
    mean(strain_energy_map(u).values())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrainDistribution {
    /// Per-voxel `|eta|_F`.
    pub magnitude: ScalarField,
    pub histogram: Histogram,
    pub exceed_mask: Vec<bool>,
}

pub fn strain_distribution(u: &DisplacementField, threshold: f64) -> StrainDistribution {
    let j = displacement_jacobian(u, [1.0; 3]);
    let mag: Vec<f64> = j.matrices().par_iter().map(|m| frobenius_sq(&symmetrize(m)).sqrt()).collect();
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let histogram = Histogram::build(&mag, lo, hi, HISTOGRAM_BINS);
    let exceed_mask = mag.iter().map(|&m| m > threshold).collect();
    StrainDistribution {
        magnitude: ScalarField::new_unchecked(u.dims(), mag),
        histogram,
        exceed_mask,
    }
}

/// Absolute percent change in voxel count of each structure after warping the
/// moving labels by `u`. Structures absent from the moving map map to `None`.
pub fn volume_change(
    moving_labels: &LabelMap,
    u: &DisplacementField,
    structures: &[u32],
) -> Result<BTreeMap<u32, Option<f64>>> {
    let warped = warp_labels(moving_labels, u)?;
    Ok(structures
        .iter()
        .map(|&s| {
            let before = moving_labels.count(s);
            let after = warped.count(s);
            let pct = (before > 0).then(|| 100.0 * before.abs_diff(after) as f64 / before as f64);
            (s, pct)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice_per_label: BTreeMap<u32, f64>,
    pub mean_dice: Option<f64>,
    pub pct_jac_ge1: f64,
    pub pct_jac_le0: f64,
    pub strain_energy: f64,
    pub neg_jac_histogram: Histogram,
    pub strain_histogram: Histogram,
    /// `None` marks a structure missing from the moving labels.
    pub volume_changes: BTreeMap<u32, Option<f64>>,
}

/// Scores `u` against the fixed labels. Dice compares `fixed_labels` with the
/// moving labels warped by `u`; volume change is reported for `structures`.
pub fn evaluate(
    fixed_labels: &LabelMap,
    moving_labels: &LabelMap,
    u: &DisplacementField,
    structures: &[u32],
) -> Result<MetricsReport> {
    fixed_labels.dims().check_same(&moving_labels.dims())?;
    fixed_labels.dims().check_same(&u.dims())?;
    let warped = warp_labels(moving_labels, u)?;
    let d = dice(fixed_labels, &warped)?;
    let js = jacobian_stats(u);
    Ok(MetricsReport {
        dice_per_label: d.per_label,
        mean_dice: d.mean,
        pct_jac_ge1: js.pct_ge1,
        pct_jac_le0: js.pct_le0,
        strain_energy: strain_energy_metric(u),
        neg_jac_histogram: js.neg_histogram,
        strain_histogram: strain_distribution(u, STRAIN_THRESHOLD).histogram,
        volume_changes: volume_change(moving_labels, u, structures)?,
    })
}

/// One voxel of the parameter/energy scatter data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub g: f64,
    pub lambda_hat: f64,
    pub mu_hat: f64,
    pub alpha_hat: f64,
    /// `alpha * lambda * tr(eta)^2`
    pub e_strain: f64,
    /// `alpha * mu * |eta|_F^2`
    pub e_shear: f64,
    pub e_total: f64,
    /// `c * max(0, -det(I + J))^2`
    pub folding: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub g: f64,
    pub lambda_hat: f64,
    pub mu_hat: f64,
    pub alpha_hat: f64,
}

/// Adaptive coefficients sampled at `points` evenly spaced `g` in `[0, g_max]`.
pub fn response_curves(p: &AdaptiveParams, g_max: f64, points: usize) -> Vec<CurvePoint> {
    (0..points)
        .map(|i| {
            let g = if points > 1 { g_max * i as f64 / (points - 1) as f64 } else { 0.0 };
            CurvePoint {
                g,
                lambda_hat: p.lambda_at(g).0,
                mu_hat: p.mu_at(g).0,
                alpha_hat: p.alpha_at(g).0,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterEnergyTable {
    pub records: Vec<ParamRecord>,
    pub curves: Vec<CurvePoint>,
}

/// Per-voxel records plus response curves up to the largest observed `g`
/// (or up to 1 for a field with no gradient).
pub fn parameter_energy_table(u: &DisplacementField, p: &AdaptiveParams) -> Result<ParameterEnergyTable> {
    p.validate()?;
    let j = displacement_jacobian(u, [1.0; 3]);
    let records: Vec<ParamRecord> = j
        .matrices()
        .par_iter()
        .map(|m| {
            let g = frobenius_sq(m).sqrt();
            let (l, _) = p.lambda_at(g);
            let (mu, _) = p.mu_at(g);
            let (a, _) = p.alpha_at(g);
            let e = symmetrize(m);
            let tr = trace(&e);
            let e_strain = a * l * tr * tr;
            let e_shear = a * mu * frobenius_sq(&e);
            let fold = (-crate::field_ops::deformation_det(m)).max(0.0);
            ParamRecord {
                g,
                lambda_hat: l,
                mu_hat: mu,
                alpha_hat: a,
                e_strain,
                e_shear,
                e_total: e_strain + e_shear,
                folding: p.c * fold * fold,
            }
        })
        .collect();
    let g_max = records.iter().map(|r| r.g).fold(0.0, f64::max);
    let g_max = if g_max > 0.0 { g_max } else { 1.0 };
    Ok(ParameterEnergyTable {
        records,
        curves: response_curves(p, g_max, CURVE_POINTS),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{identity_displacement, Dims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dilation(n: usize, s: f64) -> DisplacementField {
        DisplacementField::from_fn(Dims([n; 3]), |x, y, z| [s * x as f64, s * y as f64, s * z as f64]).unwrap()
    }

    fn smooth_random(n: usize, amp: f64, seed: u64) -> DisplacementField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k: Vec<[f64; 3]> = (0..3).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.2..0.9))).collect();
        DisplacementField::from_fn(Dims([n; 3]), |x, y, z| {
            let p = [x as f64, y as f64, z as f64];
            [0, 1, 2].map(|c| amp * (k[c][0] * p[0] + 2.0 * k[c][1] * p[1] + 3.0 * k[c][2] * p[2]).sin())
        })
        .unwrap()
    }

    #[test]
    fn dice_examples() {
        let d = Dims([10, 10, 2]);
        let a = LabelMap::new(d, (0..200).map(|i| if i < 100 { 1 } else { 0 }).collect()).unwrap();
        let b = LabelMap::new(d, (0..200).map(|i| if (50..150).contains(&i) { 1 } else { 0 }).collect()).unwrap();
        assert_eq!(dice(&a, &b).unwrap().per_label[&1], 0.5);
        assert_eq!(dice(&a, &a).unwrap().mean, Some(1.0));
        let c = LabelMap::new(d, (0..200).map(|i| if i >= 100 { 1 } else { 0 }).collect()).unwrap();
        assert_eq!(dice(&a, &c).unwrap().per_label[&1], 0.0);
        let empty = LabelMap::new(d, vec![0; 200]).unwrap();
        let e = dice(&empty, &empty).unwrap();
        assert!(e.per_label.is_empty() && e.mean.is_none());
    }

    #[test]
    fn dice_is_symmetric_and_means_over_fixed_labels() {
        let d = Dims([6, 5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = LabelMap::new(d, (0..d.len()).map(|_| rng.gen_range(0..4)).collect()).unwrap();
        let b = LabelMap::new(d, (0..d.len()).map(|_| rng.gen_range(0..6)).collect()).unwrap();
        let ab = dice(&a, &b).unwrap();
        let ba = dice(&b, &a).unwrap();
        assert_eq!(ab.per_label, ba.per_label);
        assert_eq!(ab.per_label.len(), 5);
        let want = (1..4).map(|l| ab.per_label[&l]).sum::<f64>() / 3.0;
        assert!((ab.mean.unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn jacobian_stats_examples() {
        let z = jacobian_stats(&identity_displacement(Dims([4; 3])).unwrap());
        assert_eq!((z.pct_ge1, z.pct_le0), (100.0, 0.0));
        assert!(z.neg_histogram.counts.is_empty());

        let u = dilation(5, 0.1);
        let det = jacobian_determinants(&u);
        for i in 0..det.values().len() {
            if u.dims().is_interior(i) {
                assert!((det.values()[i] - 1.331).abs() < 1e-12);
            }
        }
        assert_eq!(jacobian_stats(&u).pct_le0, 0.0);

        // one folded voxel out of 1000
        let d = Dims([10; 3]);
        let mut u = identity_displacement(d).unwrap();
        u.vectors_mut()[d.index(4, 5, 5)][0] = 1.5;
        u.vectors_mut()[d.index(6, 5, 5)][0] = -1.5;
        let s = jacobian_stats(&u);
        assert!((jacobian_determinants(&u).values()[d.index(5, 5, 5)] + 0.5).abs() < 1e-12);
        assert!((s.pct_le0 - 0.1).abs() < 1e-12);
        assert_eq!(s.neg_histogram.total(), 1);
        assert_eq!(s.neg_histogram.counts.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn determinant_bands_partition_the_grid() {
        for seed in 0..5 {
            let s = jacobian_stats(&smooth_random(8, 1.2, seed));
            assert!(s.pct_le0 > 0.0);
            assert!((s.pct_ge1 + s.pct_between + s.pct_le0 - 100.0).abs() < 1e-9);
            let n_le0 = (s.pct_le0 / 100.0 * 512.0).round() as u64;
            let n_zero = jacobian_determinants(&smooth_random(8, 1.2, seed))
                .values()
                .iter()
                .filter(|&&d| d == 0.0)
                .count() as u64;
            assert_eq!(s.neg_histogram.total(), n_le0 - n_zero);
        }
    }

    #[test]
    fn strain_energy_examples() {
        assert_eq!(strain_energy_metric(&identity_displacement(Dims([4; 3])).unwrap()), 0.0);
        let s = 0.01;
        let u = dilation(7, s);
        let m = strain_energy_map(&u);
        for i in 0..m.values().len() {
            if u.dims().is_interior(i) {
                assert!((m.values()[i] - 12.0 * s * s).abs() < 1e-10);
            }
        }
        // pure shear u1 = h * x2 gives eta12 = eta21 = h/2
        let h = 0.2;
        let shear = DisplacementField::from_fn(Dims([5; 3]), |_, y, _| [h * y as f64, 0.0, 0.0]).unwrap();
        let m = strain_energy_map(&shear);
        assert!((m.values()[shear.dims().index(2, 2, 2)] - 2.0 * (h / 2.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn strain_distribution_examples() {
        let zero = strain_distribution(&identity_displacement(Dims([4; 3])).unwrap(), 1.0);
        assert_eq!(zero.histogram.counts[0], 64);
        assert_eq!(zero.histogram.total(), 64);
        assert!(zero.exceed_mask.iter().all(|m| !m));

        let u = dilation(5, 0.1);
        let sd = strain_distribution(&u, 1.0);
        let c = u.dims().index(2, 2, 2);
        assert!((sd.magnitude.values()[c] - 0.1 * 3f64.sqrt()).abs() < 1e-12);
        assert!(!sd.exceed_mask[c]);
        assert_eq!(sd.histogram.total(), 125);

        // J12 = 2 gives eta12 = eta21 = 1, magnitude sqrt(2)
        let shear = DisplacementField::from_fn(Dims([5; 3]), |_, y, _| [2.0 * y as f64, 0.0, 0.0]).unwrap();
        let sd = strain_distribution(&shear, 1.0);
        let c = shear.dims().index(2, 2, 2);
        assert!((sd.magnitude.values()[c] - 2f64.sqrt()).abs() < 1e-12);
        assert!(sd.exceed_mask[c]);
    }

    #[test]
    fn volume_change_examples() {
        let d = Dims([12; 3]);
        let labels = LabelMap::new(
            d,
            (0..d.len())
                .map(|i| {
                    let c = d.coords(i);
                    if c.iter().all(|&v| (3..7).contains(&v)) {
                        5
                    } else {
                        0
                    }
                })
                .collect(),
        )
        .unwrap();
        let id = volume_change(&labels, &identity_displacement(d).unwrap(), &[5, 9]).unwrap();
        assert_eq!(id[&5], Some(0.0));
        assert_eq!(id[&9], None);
        let shift = DisplacementField::from_fn(d, |_, _, _| [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(volume_change(&labels, &shift, &[5]).unwrap()[&5], Some(0.0));
    }

    #[test]
    fn volume_change_formula() {
        // 1000-voxel structure; one 10x10 slab now samples background
        let d = Dims([20, 10, 10]);
        let labels = LabelMap::new(d, (0..d.len()).map(|i| u32::from(d.coords(i)[0] < 10)).collect()).unwrap();
        let u = DisplacementField::from_fn(d, |x, _, _| [if x == 9 { 1.0 } else { 0.0 }, 0.0, 0.0]).unwrap();
        let v = volume_change(&labels, &u, &[1]).unwrap();
        assert!((v[&1].unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_table_zero_field() {
        let t = parameter_energy_table(&identity_displacement(Dims([3; 3])).unwrap(), &AdaptiveParams::default())
            .unwrap();
        assert_eq!(t.records.len(), 27);
        let r = t.records[0];
        assert!(t.records.iter().all(|x| *x == r));
        assert_eq!((r.g, r.lambda_hat, r.alpha_hat), (0.0, 2.0, 2.0));
        assert!((r.mu_hat - 0.99665).abs() < 1e-5);
        assert_eq!((r.e_strain, r.e_shear, r.e_total, r.folding), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(t.curves.len(), CURVE_POINTS);
        assert_eq!(t.curves[0].g, 0.0);
        assert_eq!(t.curves[CURVE_POINTS - 1].g, 1.0);
    }

    #[test]
    fn lambda_decreases_along_sorted_records() {
        let t = parameter_energy_table(&smooth_random(8, 0.3, 11), &AdaptiveParams::default()).unwrap();
        let mut recs = t.records.clone();
        recs.sort_by(|a, b| a.g.total_cmp(&b.g));
        for w in recs.windows(2) {
            assert!(w[1].lambda_hat <= w[0].lambda_hat);
            if w[1].g > w[0].g && w[0].g < 3.0 {
                assert!(w[1].lambda_hat < w[0].lambda_hat);
            }
        }
        for r in &t.records {
            assert_eq!(r.e_total, r.e_strain + r.e_shear);
        }
    }
}
