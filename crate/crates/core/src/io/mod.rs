//! File formats for volumes, label maps, displacement fields and reports.
//!
//! Format is chosen by extension:
//!
//! - `.nii`: uncompressed single-file NIfTI-1, little-endian.
//! - `.bin` (or `.json`): raw little-endian payload plus a JSON sidecar with
//!   the same stem, see [`tensor_file`].
//!
//! Displacement fields are always stored as tensor files. Values are held as
//! f64 in memory and stored as f32, so a write/read round trip rounds to f32.

pub mod nifti;
pub mod report;
pub mod tensor_file;

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{DisplacementField, LabelMap, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Nifti,
    Tensor,
}

pub fn detect_format(path: &Path) -> Result<Format> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".nii.gz") {
        return Err(Error::CompressedNifti(path.to_path_buf()));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => Ok(Format::Nifti),
        Some("bin") | Some("json") => Ok(Format::Tensor),
        _ => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match detect_format(path)? {
        Format::Nifti => nifti::read_volume(path),
        Format::Tensor => tensor_file::read_volume(path),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match detect_format(path)? {
        Format::Nifti => nifti::read_labels(path),
        Format::Tensor => tensor_file::read_labels(path),
    }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    match detect_format(path)? {
        Format::Nifti => nifti::write_volume(path, v),
        Format::Tensor => tensor_file::write_volume(path, v),
    }
}

pub fn write_labels(path: &Path, l: &LabelMap) -> Result<()> {
    match detect_format(path)? {
        Format::Nifti => nifti::write_labels(path, l),
        Format::Tensor => tensor_file::write_labels(path, l),
    }
}

pub fn write_displacement(path: &Path, u: &DisplacementField) -> Result<()> {
    expect_tensor(path)?;
    tensor_file::write_displacement(path, u)
}

pub fn read_displacement(path: &Path) -> Result<DisplacementField> {
    expect_tensor(path)?;
    tensor_file::read_displacement(path)
}

fn expect_tensor(path: &Path) -> Result<()> {
    match detect_format(path)? {
        Format::Tensor => Ok(()),
        Format::Nifti => Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
