//! Minimal NIfTI-1 single-file reader and writer.
//!
//! Only uncompressed 3D volumes with datatypes uint8, int16, float32 and
//! float64 are handled. Byte order is inferred from `sizeof_hdr`.

use std::fmt;

use serde::Serialize;

use super::volume::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const MIN_FILE_SIZE: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NiftiType {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl NiftiType {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::Uint8),
            4 => Ok(Self::Int16),
            16 => Ok(Self::Float32),
            64 => Ok(Self::Float64),
            other => Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int16 => 4,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    pub fn bitpix(self) -> i16 {
        8 * self.size() as i16
    }

    pub fn size(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub pixdim: [f32; 8],
    #[serde(serialize_with = "magic_as_str")]
    pub magic: [u8; 4],
    pub endianness: Endianness,
}

fn magic_as_str<S: serde::Serializer>(magic: &[u8; 4], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(magic).replace('\0', "\\0"))
}

impl NiftiHeader {
    /// Header for a float32 volume of `[nx, ny, nz]` voxels with 1 mm spacing.
    pub fn for_f32(nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim: [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1],
            datatype: NiftiType::Float32.code(),
            bitpix: 32,
            vox_offset: MIN_FILE_SIZE as f32,
            scl_slope: 0.0,
            scl_inter: 0.0,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            magic: MAGIC_SINGLE,
            endianness: Endianness::Little,
        }
    }

    /// `[nx, ny, nz]`.
    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    fn data_offset(&self) -> usize {
        if self.magic == MAGIC_PAIR && self.vox_offset == 0.0 {
            MIN_FILE_SIZE
        } else {
            self.vox_offset as usize
        }
    }
}

impl fmt::Display for NiftiHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sizeof_hdr={}", self.sizeof_hdr)?;
        writeln!(f, "dim={:?}", self.dim)?;
        writeln!(f, "datatype={}", self.datatype)?;
        writeln!(f, "bitpix={}", self.bitpix)?;
        writeln!(f, "pixdim={:?}", self.pixdim)?;
        writeln!(f, "vox_offset={}", self.vox_offset)?;
        writeln!(f, "scl_slope={}", self.scl_slope)?;
        writeln!(f, "scl_inter={}", self.scl_inter)?;
        writeln!(f, "magic={}", String::from_utf8_lossy(&self.magic).replace('\0', "\\0"))?;
        write!(f, "endianness={:?}", self.endianness)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    order: Endianness,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a: [u8; N] = self.bytes[off..off + N].try_into().expect("length checked");
        if self.order == Endianness::Big {
            a.reverse();
        }
        a
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.array(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.array(off))
    }

    fn f64(&self, off: usize) -> f64 {
        f64::from_le_bytes(self.array(off))
    }
}

/// Parses the 348-byte header; `bytes` must hold at least [`MIN_FILE_SIZE`] bytes.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < MIN_FILE_SIZE {
        return Err(Error::format(
            bytes.len(),
            format!(
                "file has {} bytes, a NIfTI-1 file needs at least {MIN_FILE_SIZE} (missing {} bytes)",
                bytes.len(),
                MIN_FILE_SIZE - bytes.len()
            ),
        ));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let be = i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let order = if le == HEADER_SIZE as i32 {
        Endianness::Little
    } else if be == HEADER_SIZE as i32 {
        Endianness::Big
    } else {
        return Err(Error::format(0, format!("sizeof_hdr is {le} (expected 348 in either byte order)")));
    };
    let r = Reader { bytes, order };
    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().expect("4 bytes");
    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(Error::format(
            OFF_MAGIC,
            format!("bad magic {:?}", String::from_utf8_lossy(&magic)),
        ));
    }
    let dim: [i16; 8] = std::array::from_fn(|i| r.i16(OFF_DIM + 2 * i));
    let pixdim: [f32; 8] = std::array::from_fn(|i| r.f32(OFF_PIXDIM + 4 * i));
    Ok(NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim,
        datatype: r.i16(OFF_DATATYPE),
        bitpix: r.i16(OFF_BITPIX),
        vox_offset: r.f32(OFF_VOX_OFFSET),
        scl_slope: r.f32(OFF_SCL_SLOPE),
        scl_inter: r.f32(OFF_SCL_INTER),
        pixdim,
        magic,
        endianness: order,
    })
}

/// Parses a single-file NIfTI-1 volume into single-precision voxels.
///
/// Values are scaled by `scl_slope`/`scl_inter` when the slope is nonzero.
/// The voxel tensor is `[nz, ny, nx]`, so its row-major order matches the
/// file's x-fastest order.
pub fn parse_nifti1(bytes: &[u8]) -> Result<(NiftiHeader, Volume)> {
    let header = parse_header(bytes)?;
    let ndim = header.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(OFF_DIM, format!("dim[0]={ndim} outside [1, 7]")));
    }
    if ndim != 3 {
        return Err(Error::Unsupported(format!("{ndim}-dimensional NIfTI volume (only 3D)")));
    }
    if let Some(i) = (1..=3).find(|&i| header.dim[i] < 1) {
        return Err(Error::format(OFF_DIM + 2 * i, format!("dim[{i}]={} < 1", header.dim[i])));
    }
    let dtype = NiftiType::from_code(header.datatype)?;
    if header.bitpix != dtype.bitpix() {
        return Err(Error::format(
            OFF_BITPIX,
            format!("bitpix {} does not match datatype {}", header.bitpix, header.datatype),
        ));
    }
    let offset = header.data_offset();
    if offset < HEADER_SIZE {
        return Err(Error::format(OFF_VOX_OFFSET, format!("vox_offset {} inside the header", header.vox_offset)));
    }
    let [nx, ny, nz] = header.spatial_dims();
    let count = nx * ny * nz;
    let needed = count * dtype.size();
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::format(
            bytes.len(),
            format!(
                "voxel data truncated: expected {needed} bytes at offset {offset}, missing {} bytes",
                needed - available
            ),
        ));
    }
    let r = Reader {
        bytes,
        order: header.endianness,
    };
    let scale = header.scl_slope != 0.0 && header.scl_slope.is_finite();
    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    let voxels: Vec<f32> = (0..count)
        .map(|i| {
            let at = offset + i * dtype.size();
            let raw = match dtype {
                NiftiType::Uint8 => bytes[at] as f64,
                NiftiType::Int16 => r.i16(at) as f64,
                NiftiType::Float32 => r.f32(at) as f64,
                NiftiType::Float64 => r.f64(at),
            };
            (if scale { raw * slope + inter } else { raw }) as f32
        })
        .collect();
    let spacing = std::array::from_fn(|i| {
        let p = header.pixdim[3 - i].abs() as f64;
        if p > 0.0 {
            p
        } else {
            1.0
        }
    });
    let volume = Volume::new(Tensor::new([nz, ny, nx], voxels)?)?.with_spacing(spacing)?;
    Ok((header, volume))
}

/// Serializes a header and voxels (x-fastest order, in physical units).
///
/// Voxels are mapped back through `scl_slope`/`scl_inter` when the slope is
/// nonzero and rounded for integer datatypes.
pub fn write_nifti1(header: &NiftiHeader, voxels: &[f32]) -> Result<Vec<u8>> {
    let dtype = NiftiType::from_code(header.datatype)?;
    let [nx, ny, nz] = header.spatial_dims();
    if nx * ny * nz != voxels.len() {
        return Err(Error::shape(format!(
            "header dims {:?} hold {} voxels, got {}",
            [nx, ny, nz],
            nx * ny * nz,
            voxels.len()
        )));
    }
    let offset = header.data_offset().max(MIN_FILE_SIZE);
    let mut out = vec![0u8; offset + voxels.len() * dtype.size()];
    let big = header.endianness == Endianness::Big;
    let mut put = |off: usize, le: &[u8]| {
        let dst = &mut out[off..off + le.len()];
        dst.copy_from_slice(le);
        if big {
            dst.reverse();
        }
    };
    put(0, &header.sizeof_hdr.to_le_bytes());
    for (i, d) in header.dim.iter().enumerate() {
        put(OFF_DIM + 2 * i, &d.to_le_bytes());
    }
    put(OFF_DATATYPE, &header.datatype.to_le_bytes());
    put(OFF_BITPIX, &header.bitpix.to_le_bytes());
    for (i, p) in header.pixdim.iter().enumerate() {
        put(OFF_PIXDIM + 4 * i, &p.to_le_bytes());
    }
    put(OFF_VOX_OFFSET, &header.vox_offset.to_le_bytes());
    put(OFF_SCL_SLOPE, &header.scl_slope.to_le_bytes());
    put(OFF_SCL_INTER, &header.scl_inter.to_le_bytes());
    let scale = header.scl_slope != 0.0 && header.scl_slope.is_finite();
    for (i, &v) in voxels.iter().enumerate() {
        let raw = if scale {
            (v as f64 - header.scl_inter as f64) / header.scl_slope as f64
        } else {
            v as f64
        };
        let at = offset + i * dtype.size();
        match dtype {
            NiftiType::Uint8 => put(at, &[raw.round().clamp(0.0, 255.0) as u8]),
            NiftiType::Int16 => put(at, &(raw.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes()),
            NiftiType::Float32 => put(at, &(raw as f32).to_le_bytes()),
            NiftiType::Float64 => put(at, &raw.to_le_bytes()),
        }
    }
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(&header.magic);
    Ok(out)
}
