//! Deformable 3D image registration with a gradient-adaptive elastic
//! regularizer, a folding penalty, and the evaluation metrics used to compare
//! deformation fields.
//!
//! Typical use: load two pre-aligned volumes with [`io`], normalize them,
//! call [`optimizer::register`], then score the result with [`metrics`].

pub mod error;
pub mod field_ops;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod regularizers;
pub mod similarity;
pub mod synth;
pub mod stencil;
pub mod types;
pub mod warp;

pub use error::{Error, Result};
pub use optimizer::{register, EnergyBreakdown, OptimizationTrace, RegistrationConfig};
pub use regularizers::{AdaptiveParams, Regularizer};
pub use similarity::{SimilarityConfig, SimilarityKind};
pub use types::{
    identity_displacement, normalize_intensity, DisplacementField, Dims, LabelMap, Mat3, ScalarField, TensorField,
    TensorKind, Volume,
};
