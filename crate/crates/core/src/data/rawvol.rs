//! Internal raw volume format, all fields little-endian:
//!
//! ```text
//! "RVOL" | rank: u32 | dims: u32 x rank | dtype: u32 | payload
//! ```
//! with dtype codes shared with NIfTI (2 uint8, 16 float32, 64 float64).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RVOL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    Uint8,
    Float32,
    Float64,
}

impl RawDtype {
    fn code(self) -> u32 {
        match self {
            Self::Uint8 => 2,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            2 => Ok(Self::Uint8),
            16 => Ok(Self::Float32),
            64 => Ok(Self::Float64),
            other => Err(Error::Unsupported(format!("rawvol dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawVolHeader {
    pub rank: u32,
    pub dims: Vec<u32>,
    pub dtype: RawDtype,
}

impl RawVolHeader {
    pub fn payload_offset(&self) -> usize {
        12 + 4 * self.dims.len()
    }
}

fn u32_at(bytes: &[u8], off: usize) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::format(
                bytes.len(),
                format!("header truncated: need 4 bytes at offset {off}, missing {} bytes", off + 4 - bytes.len()),
            )
        })
}

pub fn parse_rawvol_header(bytes: &[u8]) -> Result<RawVolHeader> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad rawvol magic (expected \"RVOL\")"));
    }
    let rank = u32_at(bytes, 4)?;
    if !(1..=8).contains(&rank) {
        return Err(Error::format(4, format!("rank {rank} outside [1, 8]")));
    }
    let dims = (0..rank as usize)
        .map(|i| u32_at(bytes, 8 + 4 * i))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(Error::format(8 + 4 * i, "zero extent"));
    }
    let dtype = RawDtype::from_code(u32_at(bytes, 8 + 4 * rank as usize)?)?;
    Ok(RawVolHeader { rank, dims, dtype })
}

/// Decodes a rawvol file; values are widened or narrowed to `f32`.
pub fn parse_rawvol(bytes: &[u8]) -> Result<(RawVolHeader, Tensor<f32>)> {
    let header = parse_rawvol_header(bytes)?;
    let offset = header.payload_offset();
    let count: usize = header.dims.iter().map(|&d| d as usize).product();
    let needed = count * header.dtype.size();
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::format(
            bytes.len(),
            format!(
                "payload truncated: expected {needed} bytes at offset {offset}, missing {} bytes",
                needed - available
            ),
        ));
    }
    let payload = &bytes[offset..offset + needed];
    let data: Vec<f32> = match header.dtype {
        RawDtype::Uint8 => payload.iter().map(|&b| b as f32).collect(),
        RawDtype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect(),
        RawDtype::Float64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect(),
    };
    let shape: Vec<usize> = header.dims.iter().map(|&d| d as usize).collect();
    Ok((header, Tensor::new(shape, data)?))
}

fn header_bytes(shape: &[usize], dtype: RawDtype) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out
}

pub fn write_rawvol_f32(tensor: &Tensor<f32>) -> Vec<u8> {
    let mut out = header_bytes(tensor.shape(), RawDtype::Float32);
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes a boolean mask as uint8 0/1.
pub fn write_rawvol_mask(shape: &[usize], mask: &[bool]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != mask.len() {
        return Err(Error::shape(format!("mask of {} voxels for shape {shape:?}", mask.len())));
    }
    let mut out = header_bytes(shape, RawDtype::Uint8);
    out.extend(mask.iter().map(|&m| m as u8));
    Ok(out)
}
