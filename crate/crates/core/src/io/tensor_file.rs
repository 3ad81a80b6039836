//! Raw binary payload plus JSON sidecar.
//!
//! `name.bin` holds the samples, little-endian, x fastest. Vector fields
//! interleave their components per voxel. `name.json` describes the payload:
//!
//! ```json
//! {"dims":[64,64,64],"spacing":[1.0,1.0,1.0],"dtype":"f32","components":3,
//!  "byte_order":"little","layout":"x-fastest row-major"}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::types::{DisplacementField, Dims, LabelMap, Volume};

pub const LAYOUT: &str = "x-fastest row-major";
pub const BYTE_ORDER: &str = "little";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    I32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub components: usize,
    pub byte_order: String,
    pub layout: String,
}

impl TensorHeader {
    fn new(dims: Dims, spacing: [f64; 3], dtype: Dtype, components: usize) -> Self {
        TensorHeader {
            dims: dims.0,
            spacing,
            dtype,
            components,
            byte_order: BYTE_ORDER.into(),
            layout: LAYOUT.into(),
        }
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.components * 4
    }
}

/// `(payload path, sidecar path)` for either member of the pair.
pub fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

fn bad_header(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_header(path: &Path) -> Result<TensorHeader> {
    let (_, json) = paths(path);
    let text = read_file(&json)?;
    let h: TensorHeader = serde_json::from_slice(&text).map_err(|e| bad_header(&json, e.to_string()))?;
    if h.byte_order != BYTE_ORDER {
        return Err(bad_header(&json, format!("byte order {:?} not supported", h.byte_order)));
    }
    if h.layout != LAYOUT {
        return Err(bad_header(&json, format!("layout {:?} not supported", h.layout)));
    }
    if !matches!(h.components, 1 | 3) {
        return Err(bad_header(&json, format!("components must be 1 or 3, got {}", h.components)));
    }
    Dims(h.dims).validate()?;
    Ok(h)
}

fn read_payload(path: &Path, h: &TensorHeader) -> Result<Vec<u8>> {
    let (bin, _) = paths(path);
    let bytes = read_file(&bin)?;
    let expected = h.payload_len();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: bin,
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(bad_header(
            &bin,
            format!("payload has {} bytes but the sidecar dims need {expected}", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn write_pair(path: &Path, h: &TensorHeader, payload: &[u8]) -> Result<()> {
    let (bin, json) = paths(path);
    let mut text = serde_json::to_string_pretty(h).expect("header serializes");
    text.push('\n');
    write_file(&bin, payload)?;
    write_file(&json, text.as_bytes())
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            match dtype {
                Dtype::F32 => f32::from_le_bytes(b) as f64,
                Dtype::I32 => i32::from_le_bytes(b) as f64,
            }
        })
        .collect()
}

fn expect_components(path: &Path, h: &TensorHeader, n: usize) -> Result<()> {
    if h.components != n {
        return Err(bad_header(path, format!("expected {n} component(s), sidecar declares {}", h.components)));
    }
    Ok(())
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let h = TensorHeader::new(v.dims(), v.spacing(), Dtype::F32, 1);
    write_pair(path, &h, &f32_bytes(v.data().iter().copied()))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let h = read_header(path)?;
    expect_components(path, &h, 1)?;
    let bytes = read_payload(path, &h)?;
    Volume::new(Dims(h.dims), h.spacing, decode(&bytes, h.dtype))
}

pub fn write_labels(path: &Path, l: &LabelMap) -> Result<()> {
    let mut payload = Vec::with_capacity(l.labels().len() * 4);
    for &v in l.labels() {
        let v = i32::try_from(v).map_err(|_| Error::InvalidParameter(format!("label {v} does not fit in i32")))?;
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let h = TensorHeader::new(l.dims(), [1.0; 3], Dtype::I32, 1);
    write_pair(path, &h, &payload)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let h = read_header(path)?;
    expect_components(path, &h, 1)?;
    let bytes = read_payload(path, &h)?;
    let labels = decode(&bytes, h.dtype)
        .into_iter()
        .map(|v| label_from_f64(path, v))
        .collect::<Result<Vec<u32>>>()?;
    LabelMap::new(Dims(h.dims), labels)
}

pub(crate) fn label_from_f64(path: &Path, v: f64) -> Result<u32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(bad_header(path, format!("label value {v} is not a non-negative integer")))
    }
}

pub fn write_displacement(path: &Path, u: &DisplacementField) -> Result<()> {
    let h = TensorHeader::new(u.dims(), [1.0; 3], Dtype::F32, 3);
    write_pair(path, &h, &f32_bytes(u.vectors().iter().flat_map(|v| v.iter().copied())))
}

pub fn read_displacement(path: &Path) -> Result<DisplacementField> {
    let h = read_header(path)?;
    expect_components(path, &h, 3)?;
    if h.dtype != Dtype::F32 {
        return Err(bad_header(path, "displacement fields must be f32"));
    }
    let bytes = read_payload(path, &h)?;
    let vals = decode(&bytes, h.dtype);
    let vectors = vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    DisplacementField::new(Dims(h.dims), vectors)
}
