//! Grid containers shared by every stage of the pipeline.
//!
//! All grids use one memory order: flat arrays, x fastest, then y, then z,
//! so the voxel `(x, y, z)` lives at `x + nx * (y + ny * z)`.
//! Displacements are stored in voxel units; physical spacing only enters
//! through the finite-difference operators.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// 3x3 matrix, row-major (`m[i][j]`).
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO3: Mat3 = [[0.0; 3]; 3];

/// Voxel counts along x, y, z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let d = Dims([nx, ny, nz]);
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&n| n < 2) {
            return Err(Error::DimsTooSmall(self.0));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.0[0];
        let ny = self.0[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Flat-index stride of one step along `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.0[0],
            _ => self.0[0] * self.0[1],
        }
    }

    /// True when the voxel is at least one sample away from every face.
    pub fn is_interior(&self, i: usize) -> bool {
        let c = self.coords(i);
        (0..3).all(|a| c[a] > 0 && c[a] + 1 < self.0[a])
    }

    pub fn check_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(self.0, other.0));
        }
        Ok(())
    }
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidSpacing(spacing));
    }
    Ok(())
}

fn check_finite(values: impl Iterator<Item = f64>) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    Ok(())
}

fn check_len(dims: Dims, actual: usize, per_voxel: usize) -> Result<()> {
    let expected = dims.len() * per_voxel;
    if actual != expected {
        return Err(Error::LengthMismatch {
            dims: dims.0,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Dense scalar image with physical voxel spacing in millimeters.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        check_spacing(spacing)?;
        check_len(dims, data.len(), 1)?;
        check_finite(data.iter().copied())?;
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    pub fn from_fn(
        dims: Dims,
        spacing: [f64; 3],
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz() {
            for y in 0..dims.ny() {
                for x in 0..dims.nx() {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Min-max rescaling of intensities to `[0, 1]`.
pub fn normalize_intensity(v: &Volume) -> Result<Volume> {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        return Err(Error::DegenerateIntensity(lo));
    }
    let scale = 1.0 / (hi - lo);
    let data = v
        .data
        .iter()
        .map(|&s| ((s - lo) * scale).clamp(0.0, 1.0))
        .collect();
    Volume::new(v.dims, v.spacing, data)
}

/// Integer segmentation; label 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    dims: Dims,
    labels: Vec<u32>,
    pub label_names: BTreeMap<u32, String>,
}

impl LabelMap {
    pub fn new(dims: Dims, labels: Vec<u32>) -> Result<Self> {
        dims.validate()?;
        check_len(dims, labels.len(), 1)?;
        Ok(LabelMap {
            dims,
            labels,
            label_names: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Sorted distinct labels, background included if present.
    pub fn label_set(&self) -> Vec<u32> {
        let mut set: Vec<u32> = self.labels.clone();
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Per-voxel displacement `u(x)` in voxel units; the deformation is `x + u(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(dims: Dims, vectors: Vec<[f64; 3]>) -> Result<Self> {
        dims.validate()?;
        check_len(dims, vectors.len(), 1)?;
        check_finite(vectors.iter().flat_map(|v| v.iter().copied()))?;
        Ok(DisplacementField { dims, vectors })
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(dims.len());
        for z in 0..dims.nz() {
            for y in 0..dims.ny() {
                for x in 0..dims.nx() {
                    vectors.push(f(x, y, z));
                }
            }
        }
        DisplacementField::new(dims, vectors)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    /// Mutable access for in-place optimizer updates.
    pub fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    /// One displacement component as a contiguous scalar array.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.vectors.iter().map(|v| v[c]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    pub fn mean_norm(&self) -> f64 {
        let s: f64 = self.vectors.iter().map(|v| norm3(v)).sum();
        s / self.vectors.len() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(norm3).fold(0.0, f64::max)
    }
}

/// Zero displacement field, i.e. the identity deformation.
pub fn identity_displacement(dims: Dims) -> Result<DisplacementField> {
    DisplacementField::new(dims, vec![[0.0; 3]; dims.len()])
}

#[inline]
pub fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    /// Displacement gradient, `J[i][j] = du_i / dx_j`.
    Jacobian,
    /// Symmetric small-deformation strain.
    Strain,
}

/// One 3x3 matrix per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    dims: Dims,
    kind: TensorKind,
    matrices: Vec<Mat3>,
}

impl TensorField {
    pub fn new(dims: Dims, kind: TensorKind, matrices: Vec<Mat3>) -> Result<Self> {
        check_len(dims, matrices.len(), 1)?;
        check_finite(matrices.iter().flat_map(|m| m.iter().flatten().copied()))?;
        if kind == TensorKind::Strain {
            for (idx, m) in matrices.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..i {
                        if (m[i][j] - m[j][i]).abs() > 1e-6 {
                            return Err(Error::InvalidParameter(format!(
                                "strain tensor at voxel {idx} is not symmetric"
                            )));
                        }
                    }
                }
            }
        }
        Ok(TensorField {
            dims,
            kind,
            matrices,
        })
    }

    pub(crate) fn new_unchecked(dims: Dims, kind: TensorKind, matrices: Vec<Mat3>) -> Self {
        debug_assert_eq!(matrices.len(), dims.len());
        TensorField {
            dims,
            kind,
            matrices,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn matrices(&self) -> &[Mat3] {
        &self.matrices
    }
}

/// One scalar per voxel: gradient norms, densities, determinants, parameter maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        check_len(dims, values.len(), 1)?;
        check_finite(values.iter().copied())?;
        Ok(ScalarField { dims, values })
    }

    pub fn constant(dims: Dims, value: f64) -> Self {
        ScalarField {
            dims,
            values: vec![value; dims.len()],
        }
    }

    pub(crate) fn new_unchecked(dims: Dims, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.len());
        ScalarField { dims, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Fixed-order pairwise summation so reductions are reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 128;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}
