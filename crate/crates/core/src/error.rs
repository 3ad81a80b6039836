use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dims too small: {0:?} (every axis needs at least 2 samples)")]
    DimsTooSmall([usize; 3]),

    #[error("invalid spacing {0:?}: every component must be positive and finite")]
    InvalidSpacing([f64; 3]),

    #[error("data length {actual} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),

    #[error("degenerate intensity range (min == max == {0})")]
    DegenerateIntensity(f64),

    #[error("invalid Lamé field: negative value {value} at voxel {index}")]
    InvalidLame { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pyramid level too small: dims {0:?} cannot be halved (need >= 4 per axis)")]
    PyramidTooSmall([usize; 3]),

    #[error("non-finite energy at level {level}, iteration {iteration}")]
    NonFiniteEnergy {
        level: usize,
        iteration: usize,
        trace: Box<crate::optimizer::OptimizationTrace>,
    },

    #[error("could not satisfy fold-free bound; reduce amplitude (min det {min_det:.4} after {attempts} attempts)")]
    FoldFreeExhausted { attempts: usize, min_det: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported NIfTI variant in {0} (only single-file NIfTI-1 .nii)")]
    UnsupportedNiftiVariant(PathBuf),

    #[error("unsupported datatype code {code} in {path}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("malformed header in {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("unsupported file format: {0} (expected .nii, or .bin with a .json sidecar)")]
    UnsupportedFormat(PathBuf),

    #[error("compressed NIfTI is not supported: {0} (decompress to .nii first)")]
    CompressedNifti(PathBuf),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
