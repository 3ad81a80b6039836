//! Deformation regularizers and their gradients with respect to `u`.
//!
//! The centerpiece is the gradient-adaptive elastic energy: the Lamé
//! coefficients and the overall weight are per-voxel functions of the
//! Jacobian norm `g = |grad u|_F`,
//!
//! ```text
//! lambda(g) = lambda0 * (1 + delta * exp(-g / theta))
//! mu(g)     = mu0     * (1 + delta * sigmoid(-(g - tau) / kappa))
//! alpha(g)  = 1 + beta0 * exp(-g)
//! R(u)      = mean_x alpha(g) * (lambda(g) * tr(eta)^2 + mu(g) * |eta|_F^2)
//! ```
//!
//! with `eta = (J + J^T) / 2`. All integrals over the domain are discretized
//! as voxel means so energies do not scale with resolution. Displacements and
//! derivatives are in voxel units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{
    cofactor3, deformation_det, displacement_jacobian, frobenius_sq, jacobian_adjoint, symmetrize, trace,
};
use crate::stencil::{self, AxisOp};
use crate::types::{mean, DisplacementField, Dims, Mat3, ScalarField, ZERO3};

const UNIT_SPACING: [f64; 3] = [1.0; 3];
/// Floor on `g` when differentiating the Frobenius norm at the origin.
const NORM_FLOOR: f64 = 1e-12;

/// Hyperparameters of the adaptive elastic regularizer and folding penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    /// Base first Lamé parameter.
    pub lambda0: f64,
    /// Base shear modulus.
    pub mu0: f64,
    /// Folding penalty weight.
    pub c: f64,
    /// Magnitude of the gradient-driven adjustment of both Lamé parameters.
    pub delta: f64,
    /// Sensitivity of the adaptive overall weight.
    pub beta0: f64,
    /// Sigmoid center for the shear modulus.
    pub tau: f64,
    /// Sigmoid scale for the shear modulus.
    pub kappa: f64,
    /// Exponential sensitivity for the first Lamé parameter.
    pub theta: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams {
            lambda0: 1.0,
            mu0: 0.5,
            c: 10.0,
            delta: 1.0,
            beta0: 1.0,
            tau: 0.05,
            kappa: 0.01,
            theta: 0.1,
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("mu0", self.mu0),
            ("c", self.c),
            ("kappa", self.kappa),
            ("theta", self.theta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("delta", self.delta), ("beta0", self.beta0)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite".into()));
        }
        Ok(())
    }

    /// `(lambda(g), d lambda / dg)`
    #[inline]
    pub fn lambda_at(&self, g: f64) -> (f64, f64) {
        let e = (-g / self.theta).exp();
        (
            self.lambda0 * (1.0 + self.delta * e),
            -self.lambda0 * self.delta * e / self.theta,
        )
    }

    /// `(mu(g), d mu / dg)`
    #[inline]
    pub fn mu_at(&self, g: f64) -> (f64, f64) {
        let s = sigmoid(-(g - self.tau) / self.kappa);
        (
            self.mu0 * (1.0 + self.delta * s),
            -self.mu0 * self.delta * s * (1.0 - s) / self.kappa,
        )
    }

    /// The g-dependent part of `mu(g)`, `mu0 * delta * sigmoid(..)`. For large
    /// `g` it drops below the resolution of `mu0` in f64, so monotonicity
    /// checks far past `tau` need this term rather than `mu` itself.
    #[inline]
    pub fn mu_excess(&self, g: f64) -> f64 {
        self.mu0 * self.delta * sigmoid(-(g - self.tau) / self.kappa)
    }

    /// `(alpha(g), d alpha / dg)`
    #[inline]
    pub fn alpha_at(&self, g: f64) -> (f64, f64) {
        let e = (-g).exp();
        (1.0 + self.beta0 * e, -self.beta0 * e)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn lambda_hat(g: &ScalarField, p: &AdaptiveParams) -> ScalarField {
    g.map(|v| p.lambda_at(v).0)
}

pub fn mu_hat(g: &ScalarField, p: &AdaptiveParams) -> ScalarField {
    g.map(|v| p.mu_at(v).0)
}

pub fn alpha_hat(g: &ScalarField, p: &AdaptiveParams) -> ScalarField {
    g.map(|v| p.alpha_at(v).0)
}

/// Per-voxel diagnostic maps behind a [`RegularizerReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMaps {
    pub strain: ScalarField,
    pub shear: ScalarField,
    pub folding: ScalarField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerReport {
    /// `strain_part + shear_part`; folding is kept apart.
    pub total: f64,
    pub strain_part: f64,
    pub shear_part: f64,
    pub folding_part: f64,
    pub density_maps: Option<DensityMaps>,
}

/// Which deformation penalty to use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularizer {
    /// Gradient-adaptive elastic energy. `frozen` treats the adaptive
    /// coefficients as constants in the gradient (ablation mode).
    #[serde(rename = "dare")]
    AdaptiveElastic { params: AdaptiveParams, frozen: bool },
    Elastic { lambda: f64, mu: f64 },
    Diffusion,
    Tv { eps: f64 },
    Bending,
}

impl Regularizer {
    pub fn adaptive(params: AdaptiveParams) -> Self {
        Regularizer::AdaptiveElastic { params, frozen: false }
    }

    pub fn tv() -> Self {
        Regularizer::Tv { eps: 1e-6 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::AdaptiveElastic { .. } => "dare",
            Regularizer::Elastic { .. } => "elastic",
            Regularizer::Diffusion => "diffusion",
            Regularizer::Tv { .. } => "tv",
            Regularizer::Bending => "bending",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Regularizer::AdaptiveElastic { params, .. } => params.validate(),
            Regularizer::Elastic { lambda, mu } => check_lame(*lambda, *mu),
            Regularizer::Tv { eps } if !(*eps > 0.0) => {
                Err(Error::InvalidParameter("tv eps must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Energy split as (strain, shear, total). Non-elastic penalties report
    /// everything in `total` with zero strain/shear parts.
    pub fn evaluate(&self, u: &DisplacementField) -> RegTerms {
        self.eval_impl(u, false).0
    }

    pub fn evaluate_with_gradient(&self, u: &DisplacementField) -> (RegTerms, Vec<[f64; 3]>) {
        self.eval_impl(u, true)
    }

    fn eval_impl(&self, u: &DisplacementField, want_grad: bool) -> (RegTerms, Vec<[f64; 3]>) {
        let dims = u.dims();
        match *self {
            Regularizer::Bending => bending_impl(u, want_grad),
            _ => {
                let j = displacement_jacobian(u, UNIT_SPACING);
                let per_voxel: Vec<(f64, f64, Mat3)> = j
                    .matrices()
                    .par_iter()
                    .map(|m| self.density(m, want_grad))
                    .collect();
                let strain: Vec<f64> = per_voxel.iter().map(|t| t.0).collect();
                let shear: Vec<f64> = per_voxel.iter().map(|t| t.1).collect();
                let (s, h) = (mean(&strain), mean(&shear));
                let terms = match self {
                    Regularizer::AdaptiveElastic { .. } | Regularizer::Elastic { .. } => {
                        RegTerms { strain: s, shear: h, total: s + h }
                    }
                    _ => RegTerms { strain: 0.0, shear: 0.0, total: s },
                };
                let grad = if want_grad {
                    let inv = 1.0 / dims.len() as f64;
                    let gj: Vec<Mat3> = per_voxel.iter().map(|t| scale(&t.2, inv)).collect();
                    jacobian_adjoint(dims, UNIT_SPACING, &gj)
                } else {
                    Vec::new()
                };
                (terms, grad)
            }
        }
    }

    /// Per-voxel (first density, second density, d(sum)/dJ). For non-elastic
    /// kinds the whole density sits in the first slot.
    fn density(&self, j: &Mat3, want_grad: bool) -> (f64, f64, Mat3) {
        match *self {
            Regularizer::AdaptiveElastic { params, frozen } => adaptive_density(j, &params, frozen, want_grad),
            Regularizer::Elastic { lambda, mu } => {
                let eta = symmetrize(j);
                let tr = trace(&eta);
                let q = frobenius_sq(&eta);
                let mut g = ZERO3;
                if want_grad {
                    for a in 0..3 {
                        for b in 0..3 {
                            g[a][b] = 2.0 * mu * eta[a][b];
                        }
                        g[a][a] += 2.0 * lambda * tr;
                    }
                }
                (lambda * tr * tr, mu * q, g)
            }
            Regularizer::Diffusion => (frobenius_sq(j), 0.0, scale(j, 2.0)),
            Regularizer::Tv { eps } => {
                let s = (frobenius_sq(j) + eps * eps).sqrt();
                (s, 0.0, scale(j, 1.0 / s))
            }
            Regularizer::Bending => unreachable!("bending is second order"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegTerms {
    pub strain: f64,
    pub shear: f64,
    pub total: f64,
}

fn check_lame(lambda: f64, mu: f64) -> Result<()> {
    if !(lambda >= 0.0 && mu >= 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Lamé parameters must be >= 0 (lambda {lambda}, mu {mu})"
        )));
    }
    Ok(())
}

#[inline]
fn scale(m: &Mat3, s: f64) -> Mat3 {
    let mut o = *m;
    o.iter_mut().flatten().for_each(|v| *v *= s);
    o
}

fn adaptive_density(j: &Mat3, p: &AdaptiveParams, frozen: bool, want_grad: bool) -> (f64, f64, Mat3) {
    let g = frobenius_sq(j).sqrt();
    let (lam, dlam) = p.lambda_at(g);
    let (mu, dmu) = p.mu_at(g);
    let (alpha, dalpha) = p.alpha_at(g);
    let eta = symmetrize(j);
    let tr = trace(&eta);
    let q = frobenius_sq(&eta);
    let strain = alpha * lam * tr * tr;
    let shear = alpha * mu * q;
    let mut grad = ZERO3;
    if want_grad {
        for a in 0..3 {
            for b in 0..3 {
                grad[a][b] = 2.0 * alpha * mu * eta[a][b];
            }
            grad[a][a] += 2.0 * alpha * lam * tr;
        }
        if !frozen {
            let dg = (dalpha * lam + alpha * dlam) * tr * tr + (dalpha * mu + alpha * dmu) * q;
            let k = dg / g.max(NORM_FLOOR);
            for a in 0..3 {
                for b in 0..3 {
                    grad[a][b] += k * j[a][b];
                }
            }
        }
    }
    (strain, shear, grad)
}

fn bending_impl(u: &DisplacementField, want_grad: bool) -> (RegTerms, Vec<[f64; 3]>) {
    let dims = u.dims();
    let h = 1.0;
    let inv = 1.0 / dims.len() as f64;
    let mut total = vec![0.0; dims.len()];
    let mut grad = if want_grad { vec![[0.0; 3]; dims.len()] } else { Vec::new() };
    for c in 0..3 {
        let comp = u.component(c);
        let mut gc = if want_grad { vec![0.0; dims.len()] } else { Vec::new() };
        // Pure second derivatives.
        for a in 0..3 {
            let s = stencil::apply(AxisOp::Second, a, dims, h, &comp);
            for (t, v) in total.iter_mut().zip(&s) {
                *t += v * v;
            }
            if want_grad {
                let w: Vec<f64> = s.iter().map(|v| 2.0 * inv * v).collect();
                add_into(&mut gc, &stencil::apply_transpose(AxisOp::Second, a, dims, h, &w));
            }
        }
        // Mixed partials appear twice in the full Hessian sum.
        for a in 0..3 {
            for b in (a + 1)..3 {
                let db = stencil::apply(AxisOp::First, b, dims, h, &comp);
                let dab = stencil::apply(AxisOp::First, a, dims, h, &db);
                for (t, v) in total.iter_mut().zip(&dab) {
                    *t += 2.0 * v * v;
                }
                if want_grad {
                    let w: Vec<f64> = dab.iter().map(|v| 4.0 * inv * v).collect();
                    let ta = stencil::apply_transpose(AxisOp::First, a, dims, h, &w);
                    add_into(&mut gc, &stencil::apply_transpose(AxisOp::First, b, dims, h, &ta));
                }
            }
        }
        if want_grad {
            for (g, v) in grad.iter_mut().zip(gc) {
                g[c] = v;
            }
        }
    }
    let e = mean(&total);
    (RegTerms { strain: 0.0, shear: 0.0, total: e }, grad)
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Folding energy `c * mean(max(0, -det(I + J))^2)`, its gradient, and the
/// number of voxels whose determinant is exactly zero (where the determinant
/// path contributes a zero subgradient).
pub fn folding_with_gradient(u: &DisplacementField, c: f64, want_grad: bool) -> (f64, Vec<[f64; 3]>, usize) {
    let dims = u.dims();
    let j = displacement_jacobian(u, UNIT_SPACING);
    let inv = 1.0 / dims.len() as f64;
    let per_voxel: Vec<(f64, Mat3, bool)> = j
        .matrices()
        .par_iter()
        .map(|m| {
            let det = deformation_det(m);
            let v = (-det).max(0.0);
            let mut g = ZERO3;
            if want_grad && v > 0.0 {
                let mut a = *m;
                for k in 0..3 {
                    a[k][k] += 1.0;
                }
                g = scale(&cofactor3(&a), -2.0 * c * v * inv);
            }
            (c * v * v, g, det == 0.0)
        })
        .collect();
    let dens: Vec<f64> = per_voxel.iter().map(|t| t.0).collect();
    let singular = per_voxel.iter().filter(|t| t.2).count();
    let grad = if want_grad {
        let gj: Vec<Mat3> = per_voxel.iter().map(|t| t.1).collect();
        jacobian_adjoint(dims, UNIT_SPACING, &gj)
    } else {
        Vec::new()
    };
    (mean(&dens), grad, singular)
}

pub fn folding_penalty(u: &DisplacementField, c: f64) -> f64 {
    folding_with_gradient(u, c, false).0
}

fn folding_density_map(u: &DisplacementField, c: f64) -> ScalarField {
    let j = displacement_jacobian(u, UNIT_SPACING);
    let vals = j
        .matrices()
        .iter()
        .map(|m| {
            let v = (-deformation_det(m)).max(0.0);
            c * v * v
        })
        .collect();
    ScalarField::new_unchecked(u.dims(), vals)
}

fn elastic_report(u: &DisplacementField, reg: Regularizer, c: f64, with_maps: bool) -> RegularizerReport {
    let terms = reg.evaluate(u);
    let density_maps = with_maps.then(|| {
        let j = displacement_jacobian(u, UNIT_SPACING);
        let (s, h): (Vec<f64>, Vec<f64>) = j
            .matrices()
            .iter()
            .map(|m| {
                let (a, b, _) = reg.density(m, false);
                (a, b)
            })
            .unzip();
        DensityMaps {
            strain: ScalarField::new_unchecked(u.dims(), s),
            shear: ScalarField::new_unchecked(u.dims(), h),
            folding: folding_density_map(u, c),
        }
    });
    RegularizerReport {
        total: terms.strain + terms.shear,
        strain_part: terms.strain,
        shear_part: terms.shear,
        folding_part: if c > 0.0 { folding_penalty(u, c) } else { 0.0 },
        density_maps,
    }
}

/// Adaptive elastic energy; the folding part uses `p.c`.
pub fn dare_regularizer(u: &DisplacementField, p: &AdaptiveParams, with_maps: bool) -> Result<RegularizerReport> {
    p.validate()?;
    Ok(elastic_report(u, Regularizer::adaptive(*p), p.c, with_maps))
}

/// Constant-coefficient linear elastic energy (no folding term).
pub fn elastic_regularizer(u: &DisplacementField, lambda: f64, mu: f64, with_maps: bool) -> Result<RegularizerReport> {
    check_lame(lambda, mu)?;
    Ok(elastic_report(u, Regularizer::Elastic { lambda, mu }, 0.0, with_maps))
}

pub fn diffusion_regularizer(u: &DisplacementField) -> f64 {
    Regularizer::Diffusion.evaluate(u).total
}

pub fn tv_regularizer(u: &DisplacementField, eps: f64) -> f64 {
    Regularizer::Tv { eps }.evaluate(u).total
}

pub fn bending_regularizer(u: &DisplacementField) -> f64 {
    Regularizer::Bending.evaluate(u).total
}

/// Interior mask helper for tests and metrics that ignore boundary stencils.
pub fn interior_values(dims: Dims, values: &[f64]) -> Vec<f64> {
    (0..dims.len()).filter(|&i| dims.is_interior(i)).map(|i| values[i]).collect()
}
