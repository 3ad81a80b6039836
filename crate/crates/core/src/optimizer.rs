//! Per-pair minimization of the registration energy
//!
//! ```text
//! E(u) = sim(f, m o (Id + u)) + reg_weight * R(u) + c * mean(max(0, -det(I + grad u))^2)
//! ```
//!
//! by first-order descent with moment estimates (Adam) on a coarse-to-fine
//! pyramid. The displacement starts at zero on the coarsest level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{deformation_jacobian_det, displacement_jacobian};
use crate::regularizers::{folding_with_gradient, AdaptiveParams, Regularizer};
use crate::similarity::{similarity, similarity_with_gradient, SimilarityConfig};
use crate::types::{identity_displacement, DisplacementField, Dims, Volume};
use crate::warp::{sample_trilinear, warp_trilinear, warp_trilinear_with_gradient};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub similarity: SimilarityConfig,
    pub regularizer: Regularizer,
    /// Weight of the folding penalty.
    pub folding_weight: f64,
    /// Global weight on the regularizer.
    pub reg_weight: f64,
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    /// Adam learning rate, in voxels.
    pub step_size: f64,
    /// A level stops once the max-norm of the per-voxel gradient drops below this.
    pub grad_tol: f64,
    /// Backtrack and reject steps that increase the energy.
    pub line_search: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self::with_regularizer(Regularizer::adaptive(AdaptiveParams::default()))
    }
}

impl RegistrationConfig {
    /// Defaults around a given regularizer. The adaptive elastic penalty
    /// brings its own folding weight; the baselines run without one.
    pub fn with_regularizer(regularizer: Regularizer) -> Self {
        let folding_weight = match regularizer {
            Regularizer::AdaptiveElastic { params, .. } => params.c,
            _ => 0.0,
        };
        RegistrationConfig {
            similarity: SimilarityConfig::lncc(),
            regularizer,
            folding_weight,
            reg_weight: 1.0,
            pyramid_levels: 3,
            iters_per_level: 200,
            step_size: 0.1,
            grad_tol: 1e-4,
            line_search: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.regularizer.validate()?;
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidParameter("pyramid_levels must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter("step size must be > 0".into()));
        }
        for (name, v) in [
            ("folding weight", self.folding_weight),
            ("regularizer weight", self.reg_weight),
            ("grad_tol", self.grad_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub sim: f64,
    /// Full regularizer value before `reg_weight`.
    pub regularizer: f64,
    /// Volumetric part of an elastic regularizer (0 for the others).
    pub strain: f64,
    /// Shear part of an elastic regularizer (0 for the others).
    pub shear: f64,
    pub folding: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub level: usize,
    pub iteration: usize,
    pub energy: EnergyBreakdown,
    /// Max-norm of the per-voxel gradient at this iterate.
    pub grad_max: f64,
    /// Voxels with `det(I + J) == 0` exactly (zero subgradient used).
    pub singular_voxels: usize,
    pub step_accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub dims: [usize; 3],
    pub iterations: usize,
    pub final_energy: EnergyBreakdown,
    pub pct_jac_le0: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
    pub levels: Vec<LevelSummary>,
}

fn breakdown(cfg: &RegistrationConfig, sim: f64, reg: crate::regularizers::RegTerms, folding: f64) -> EnergyBreakdown {
    EnergyBreakdown {
        sim,
        regularizer: reg.total,
        strain: reg.strain,
        shear: reg.shear,
        folding,
        total: sim + cfg.reg_weight * reg.total + folding,
    }
}

pub fn total_energy(f: &Volume, m: &Volume, u: &DisplacementField, cfg: &RegistrationConfig) -> Result<EnergyBreakdown> {
    f.dims().check_same(&m.dims())?;
    let w = warp_trilinear(m, u)?;
    let sim = similarity(f, &w, &cfg.similarity)?;
    let reg = cfg.regularizer.evaluate(u);
    let folding = if cfg.folding_weight > 0.0 {
        folding_with_gradient(u, cfg.folding_weight, false).0
    } else {
        0.0
    };
    Ok(breakdown(cfg, sim, reg, folding))
}

/// Energy, its gradient with respect to every displacement component, and the
/// count of exactly singular voxels.
pub fn energy_and_gradient(
    f: &Volume,
    m: &Volume,
    u: &DisplacementField,
    cfg: &RegistrationConfig,
) -> Result<(EnergyBreakdown, Vec<[f64; 3]>, usize)> {
    f.dims().check_same(&m.dims())?;
    let (w, img_grad) = warp_trilinear_with_gradient(m, u)?;
    let (sim, dsim_dw) = similarity_with_gradient(f, &w, &cfg.similarity)?;
    let (reg, reg_grad) = cfg.regularizer.evaluate_with_gradient(u);
    let (folding, fold_grad, singular) = if cfg.folding_weight > 0.0 {
        folding_with_gradient(u, cfg.folding_weight, true)
    } else {
        (0.0, Vec::new(), 0)
    };
    let mut grad: Vec<[f64; 3]> = img_grad
        .iter()
        .zip(&dsim_dw)
        .zip(&reg_grad)
        .map(|((ig, &ds), rg)| [0, 1, 2].map(|c| ds * ig[c] + cfg.reg_weight * rg[c]))
        .collect();
    if !fold_grad.is_empty() {
        for (g, fg) in grad.iter_mut().zip(&fold_grad) {
            for c in 0..3 {
                g[c] += fg[c];
            }
        }
    }
    Ok((breakdown(cfg, sim, reg, folding), grad, singular))
}

pub fn energy_gradient(f: &Volume, m: &Volume, u: &DisplacementField, cfg: &RegistrationConfig) -> Result<Vec<[f64; 3]>> {
    Ok(energy_and_gradient(f, m, u, cfg)?.1)
}

/// Halve every axis by averaging 2-voxel blocks; an odd trailing sample
/// forms a cell of its own. Spacing doubles.
pub fn pyramid_downsample(v: &Volume, factor: usize) -> Result<Volume> {
    if factor != 2 {
        return Err(Error::InvalidParameter(format!("unsupported downsample factor {factor}")));
    }
    let d = v.dims();
    if d.0.iter().any(|&n| n < 4) {
        return Err(Error::PyramidTooSmall(d.0));
    }
    let nd = Dims(d.0.map(|n| n.div_ceil(2)));
    let mut data = Vec::with_capacity(nd.len());
    for z in 0..nd.nz() {
        for y in 0..nd.ny() {
            for x in 0..nd.nx() {
                let mut s = 0.0;
                let mut cnt = 0.0;
                for zz in (2 * z)..(2 * z + 2).min(d.nz()) {
                    for yy in (2 * y)..(2 * y + 2).min(d.ny()) {
                        for xx in (2 * x)..(2 * x + 2).min(d.nx()) {
                            s += v.at(xx, yy, zz);
                            cnt += 1.0;
                        }
                    }
                }
                data.push(s / cnt);
            }
        }
    }
    let sp = v.spacing();
    Volume::new(nd, [sp[0] * 2.0, sp[1] * 2.0, sp[2] * 2.0], data)
}

/// Trilinear upsampling onto `target` (one pyramid step finer); vectors are
/// rescaled by the factor because voxel units shrink.
pub fn upsample_displacement(u: &DisplacementField, target: Dims, factor: usize) -> Result<DisplacementField> {
    target.validate()?;
    let src = u.dims();
    let f = factor as f64;
    let comps: Vec<Vec<f64>> = (0..3).map(|c| u.component(c)).collect();
    // Coarse cell k covers fine samples [f*k, f*k + f - 1]; its center sits at
    // fine coordinate f*k + (f - 1)/2.
    let off = (f - 1.0) / 2.0;
    DisplacementField::from_fn(target, |x, y, z| {
        let p = [x, y, z].map(|q| (q as f64 - off) / f);
        [0, 1, 2].map(|c| f * sample_trilinear(&comps[c], src, p).0)
    })
}

fn pct_folded(u: &DisplacementField) -> f64 {
    let det = deformation_jacobian_det(&displacement_jacobian(u, [1.0; 3]));
    let n = det.values().iter().filter(|&&d| d <= 0.0).count();
    100.0 * n as f64 / det.values().len() as f64
}

struct Adam {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![[0.0; 3]; n],
            v: vec![[0.0; 3]; n],
            t: 0,
        }
    }

    /// Update the moments with `grad` and return the descent direction.
    fn direction(&mut self, grad: &[[f64; 3]]) -> Vec<[f64; 3]> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(g, (m, v))| {
                let mut d = [0.0; 3];
                for c in 0..3 {
                    m[c] = Self::B1 * m[c] + (1.0 - Self::B1) * g[c];
                    v[c] = Self::B2 * v[c] + (1.0 - Self::B2) * g[c] * g[c];
                    d[c] = -(m[c] / c1) / ((v[c] / c2).sqrt() + Self::EPS);
                }
                d
            })
            .collect()
    }
}

fn stepped(u: &DisplacementField, dir: &[[f64; 3]], step: f64) -> DisplacementField {
    let mut out = u.clone();
    for (v, d) in out.vectors_mut().iter_mut().zip(dir) {
        for c in 0..3 {
            v[c] += step * d[c];
        }
    }
    out
}

fn check_finite(e: &EnergyBreakdown, level: usize, iteration: usize, trace: &OptimizationTrace) -> Result<()> {
    if !e.total.is_finite() {
        return Err(Error::NonFiniteEnergy {
            level,
            iteration,
            trace: Box::new(trace.clone()),
        });
    }
    Ok(())
}

/// Optimize one pyramid level starting from `u`; returns the lowest-energy iterate.
fn optimize_level(
    f: &Volume,
    m: &Volume,
    mut u: DisplacementField,
    cfg: &RegistrationConfig,
    level: usize,
    trace: &mut OptimizationTrace,
) -> Result<DisplacementField> {
    let n = u.dims().len() as f64;
    let mut adam = Adam::new(u.dims().len());
    let mut best: Option<(f64, DisplacementField)> = None;
    let mut iterations = 0;
    for it in 0..cfg.iters_per_level {
        let (e, grad, singular) = energy_and_gradient(f, m, &u, cfg)?;
        check_finite(&e, level, it, trace)?;
        // Energies are voxel means; scale to per-voxel gradients.
        let scaled: Vec<[f64; 3]> = grad.iter().map(|g| g.map(|c| c * n)).collect();
        let grad_max = scaled.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
        if best.as_ref().map_or(true, |(b, _)| e.total < *b) {
            best = Some((e.total, u.clone()));
        }
        let mut record = TraceRecord {
            level,
            iteration: it,
            energy: e,
            grad_max,
            singular_voxels: singular,
            step_accepted: false,
        };
        iterations = it + 1;
        if grad_max < cfg.grad_tol {
            trace.records.push(record);
            break;
        }
        let dir = adam.direction(&scaled);
        if cfg.line_search {
            let mut step = cfg.step_size;
            for _ in 0..20 {
                let cand = stepped(&u, &dir, step);
                if total_energy(f, m, &cand, cfg)?.total <= e.total {
                    u = cand;
                    record.step_accepted = true;
                    break;
                }
                step *= 0.5;
            }
        } else {
            u = stepped(&u, &dir, cfg.step_size);
            record.step_accepted = true;
        }
        trace.records.push(record);
    }
    let e = total_energy(f, m, &u, cfg)?;
    check_finite(&e, level, iterations, trace)?;
    let (final_e, u) = match best {
        Some((b, bu)) if b < e.total => (total_energy(f, m, &bu, cfg)?, bu),
        _ => (e, u),
    };
    trace.levels.push(LevelSummary {
        level,
        dims: u.dims().0,
        iterations,
        final_energy: final_e,
        pct_jac_le0: pct_folded(&u),
    });
    Ok(u)
}

/// Register `m` onto `f`: the returned field `u` makes `m(x + u(x))` match `f(x)`.
pub fn register(f: &Volume, m: &Volume, cfg: &RegistrationConfig) -> Result<(DisplacementField, OptimizationTrace)> {
    cfg.validate()?;
    f.dims().check_same(&m.dims())?;
    let mut fixed = vec![f.clone()];
    let mut moving = vec![m.clone()];
    for _ in 1..cfg.pyramid_levels {
        let nf = pyramid_downsample(fixed.last().unwrap(), 2)?;
        let nm = pyramid_downsample(moving.last().unwrap(), 2)?;
        fixed.push(nf);
        moving.push(nm);
    }
    fixed.reverse();
    moving.reverse();

    let mut trace = OptimizationTrace::default();
    let mut u = identity_displacement(fixed[0].dims())?;
    for level in 0..cfg.pyramid_levels {
        if level > 0 {
            u = upsample_displacement(&u, fixed[level].dims(), 2)?;
        }
        u = optimize_level(&fixed[level], &moving[level], u, cfg, level, &mut trace)?;
    }
    Ok((u, trace))
}
