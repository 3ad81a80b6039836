//! Uncompressed single-file NIfTI-1 (`.nii`), little-endian only.
//!
//! Honored header fields: `sizeof_hdr`, `dim[0..=3]`, `pixdim[1..=3]`,
//! `datatype` (2 = uint8, 4 = int16, 16 = float32), `vox_offset`,
//! `scl_slope`/`scl_inter` (applied when the slope is non-zero) and the
//! magic `"n+1\0"`. Orientation fields are ignored. `pixdim` is stored as
//! f32, so spacing round-trips at f32 precision.

use std::path::Path;

use super::tensor_file::label_from_f64;
use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::types::{Dims, LabelMap, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte empty extension block.
pub const VOX_OFFSET: usize = 352;
const NIFTI2_HEADER_SIZE: i32 = 540;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(i16)]
pub enum Datatype {
    U8 = 2,
    I16 = 4,
    F32 = 16,
}

impl Datatype {
    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            16 => Some(Datatype::F32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }
}

/// The subset of the header this reader understands.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub pixdim: [f64; 3],
    pub datatype: Datatype,
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn bad_header(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn parse_header(path: &Path, b: &[u8]) -> Result<NiftiHeader> {
    if b.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_SIZE,
            actual: b.len(),
        });
    }
    let sizeof_hdr = i32_at(b, 0);
    if sizeof_hdr == NIFTI2_HEADER_SIZE {
        return Err(Error::UnsupportedNiftiVariant(path.to_path_buf()));
    }
    if sizeof_hdr != HEADER_SIZE as i32 {
        let be = i32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        if be == HEADER_SIZE as i32 || be == NIFTI2_HEADER_SIZE {
            return Err(bad_header(path, "big-endian headers are not supported"));
        }
        return Err(bad_header(path, format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    if b.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_SIZE,
            actual: b.len(),
        });
    }
    match &b[OFF_MAGIC..OFF_MAGIC + 4] {
        b"n+1\0" => {}
        b"ni1\0" | b"n+2\0" | b"ni2\0" => return Err(Error::UnsupportedNiftiVariant(path.to_path_buf())),
        _ => return Err(Error::BadMagic(path.to_path_buf())),
    }
    let ndim = i16_at(b, OFF_DIM);
    if ndim != 3 {
        return Err(bad_header(path, format!("dim[0] is {ndim}, only 3-D volumes are supported")));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = i16_at(b, OFF_DIM + 2 * (a + 1));
        if v < 1 {
            return Err(bad_header(path, format!("dim[{}] is {v}", a + 1)));
        }
        *d = v as usize;
    }
    let code = i16_at(b, OFF_DATATYPE);
    let datatype = Datatype::from_code(code).ok_or(Error::UnsupportedDatatype {
        path: path.to_path_buf(),
        code,
    })?;
    let mut pixdim = [1.0; 3];
    for (a, p) in pixdim.iter_mut().enumerate() {
        let v = f32_at(b, OFF_PIXDIM + 4 * (a + 1)).abs() as f64;
        *p = if v > 0.0 && v.is_finite() { v } else { 1.0 };
    }
    let vox = f32_at(b, OFF_VOX_OFFSET);
    if !(vox >= HEADER_SIZE as f32 && vox.fract() == 0.0) {
        return Err(bad_header(path, format!("vox_offset {vox} is invalid")));
    }
    Ok(NiftiHeader {
        dims,
        pixdim,
        datatype,
        vox_offset: vox as usize,
        scl_slope: f32_at(b, OFF_SCL_SLOPE) as f64,
        scl_inter: f32_at(b, OFF_SCL_INTER) as f64,
    })
}

/// Header and scaled voxel values.
pub fn read_raw(path: &Path) -> Result<(NiftiHeader, Vec<f64>)> {
    let b = read_file(path)?;
    let h = parse_header(path, &b)?;
    let n: usize = h.dims.iter().product();
    let size = h.datatype.size();
    let expected = h.vox_offset + n * size;
    if b.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: b.len(),
        });
    }
    let payload = &b[h.vox_offset..expected];
    let raw = payload.chunks_exact(size).map(|c| match h.datatype {
        Datatype::U8 => c[0] as f64,
        Datatype::I16 => i16::from_le_bytes([c[0], c[1]]) as f64,
        Datatype::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
    });
    let vals = if h.scl_slope != 0.0 && h.scl_slope.is_finite() {
        raw.map(|v| h.scl_slope * v + h.scl_inter).collect()
    } else {
        raw.collect()
    };
    Ok((h, vals))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (h, vals) = read_raw(path)?;
    Volume::new(Dims(h.dims), h.pixdim, vals)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let (h, vals) = read_raw(path)?;
    let labels = vals
        .into_iter()
        .map(|v| label_from_f64(path, v))
        .collect::<Result<Vec<u32>>>()?;
    LabelMap::new(Dims(h.dims), labels)
}

/// Serializes a header with slope 1 and intercept 0.
pub fn encode_header(dims: Dims, pixdim: [f64; 3], datatype: Datatype) -> Vec<u8> {
    let mut b = vec![0u8; VOX_OFFSET];
    b[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [3, dims.nx() as i16, dims.ny() as i16, dims.nz() as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        b[OFF_DIM + 2 * k..OFF_DIM + 2 * k + 2].copy_from_slice(&d.to_le_bytes());
    }
    b[OFF_DATATYPE..OFF_DATATYPE + 2].copy_from_slice(&(datatype as i16).to_le_bytes());
    b[OFF_BITPIX..OFF_BITPIX + 2].copy_from_slice(&((datatype.size() * 8) as i16).to_le_bytes());
    let pd: [f32; 4] = [1.0, pixdim[0] as f32, pixdim[1] as f32, pixdim[2] as f32];
    for (k, p) in pd.iter().enumerate() {
        b[OFF_PIXDIM + 4 * k..OFF_PIXDIM + 4 * k + 4].copy_from_slice(&p.to_le_bytes());
    }
    b[OFF_VOX_OFFSET..OFF_VOX_OFFSET + 4].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    b[OFF_SCL_SLOPE..OFF_SCL_SLOPE + 4].copy_from_slice(&1f32.to_le_bytes());
    b[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
    b
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0.iter().any(|&n| n > i16::MAX as usize) {
        return Err(Error::InvalidParameter(format!("dims {:?} exceed the NIfTI-1 limit", dims.0)));
    }
    Ok(())
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    check_dims(v.dims())?;
    let mut b = encode_header(v.dims(), v.spacing(), Datatype::F32);
    b.extend(v.data().iter().flat_map(|&x| (x as f32).to_le_bytes()));
    write_file(path, &b)
}

/// Labels are stored as int16.
pub fn write_labels(path: &Path, l: &LabelMap) -> Result<()> {
    check_dims(l.dims())?;
    let mut b = encode_header(l.dims(), [1.0; 3], Datatype::I16);
    for &v in l.labels() {
        let v = i16::try_from(v).map_err(|_| Error::InvalidParameter(format!("label {v} does not fit in int16")))?;
        b.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &b)
}
