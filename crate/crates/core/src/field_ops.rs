//! Differential quantities of a displacement field.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stencil::{self, AxisOp};
use crate::types::{DisplacementField, Dims, Mat3, ScalarField, TensorField, TensorKind, ZERO3};

/// Per-voxel elastic energy densities.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyDensities {
    /// `lambda * trace(eta)^2`
    pub strain_density: ScalarField,
    /// `mu * |eta|_F^2`
    pub shear_density: ScalarField,
}

/// `J[i][j] = du_i/dx_j`.
pub fn displacement_jacobian(u: &DisplacementField, spacing: [f64; 3]) -> TensorField {
    let dims = u.dims();
    let mut mats = vec![ZERO3; dims.len()];
    for c in 0..3 {
        let comp = u.component(c);
        for axis in 0..3 {
            let d = stencil::apply(AxisOp::First, axis, dims, spacing[axis], &comp);
            for (m, v) in mats.iter_mut().zip(d) {
                m[c][axis] = v;
            }
        }
    }
    TensorField::new_unchecked(dims, TensorKind::Jacobian, mats)
}

/// Adjoint of [`displacement_jacobian`]: maps per-voxel `dE/dJ` to `dE/du`.
pub fn jacobian_adjoint(dims: Dims, spacing: [f64; 3], grad_j: &[Mat3]) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; dims.len()];
    for c in 0..3 {
        for axis in 0..3 {
            let g: Vec<f64> = grad_j.iter().map(|m| m[c][axis]).collect();
            let t = stencil::apply_transpose(AxisOp::First, axis, dims, spacing[axis], &g);
            for (o, v) in out.iter_mut().zip(t) {
                o[c] += v;
            }
        }
    }
    out
}

#[inline]
pub fn symmetrize(j: &Mat3) -> Mat3 {
    let mut e = ZERO3;
    for a in 0..3 {
        for b in 0..3 {
            e[a][b] = 0.5 * (j[a][b] + j[b][a]);
        }
    }
    e
}

#[inline]
pub fn trace(m: &Mat3) -> f64 {
    m[0][0] + m[1][1] + m[2][2]
}

#[inline]
pub fn frobenius_sq(m: &Mat3) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

#[inline]
pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix, `d det(A) / dA`. Equals `det(A) * A^-T` when A is invertible.
#[inline]
pub fn cofactor3(m: &Mat3) -> Mat3 {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

/// `det(I + J)`.
#[inline]
pub fn deformation_det(j: &Mat3) -> f64 {
    let mut a = *j;
    for (k, row) in a.iter_mut().enumerate() {
        row[k] += 1.0;
    }
    det3(&a)
}

pub fn strain_tensor(j: &TensorField) -> TensorField {
    let mats = j.matrices().par_iter().map(symmetrize).collect();
    TensorField::new_unchecked(j.dims(), TensorKind::Strain, mats)
}

/// Per-voxel Frobenius norm of the Jacobian.
pub fn gradient_norm(j: &TensorField) -> ScalarField {
    let vals = j
        .matrices()
        .par_iter()
        .map(|m| frobenius_sq(m).sqrt())
        .collect();
    ScalarField::new_unchecked(j.dims(), vals)
}

pub fn energy_densities(
    eta: &TensorField,
    lambda: &ScalarField,
    mu: &ScalarField,
) -> Result<EnergyDensities> {
    let dims = eta.dims();
    dims.check_same(&lambda.dims())?;
    dims.check_same(&mu.dims())?;
    for field in [lambda, mu] {
        if let Some((index, &value)) = field.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::InvalidLame { index, value });
        }
    }
    let (strain, shear): (Vec<f64>, Vec<f64>) = eta
        .matrices()
        .par_iter()
        .zip(lambda.values().par_iter().zip(mu.values().par_iter()))
        .map(|(e, (&l, &m))| {
            let tr = trace(e);
            (l * tr * tr, m * frobenius_sq(e))
        })
        .unzip();
    Ok(EnergyDensities {
        strain_density: ScalarField::new_unchecked(dims, strain),
        shear_density: ScalarField::new_unchecked(dims, shear),
    })
}

/// Per-voxel `det(I + J)`.
pub fn deformation_jacobian_det(j: &TensorField) -> ScalarField {
    let vals = j.matrices().par_iter().map(deformation_det).collect();
    ScalarField::new_unchecked(j.dims(), vals)
}
