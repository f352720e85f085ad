use rand::Rng;
use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which voxels receive the mask-derived whitening affine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhitenScope {
    #[default]
    AllVoxels,
    MaskOnly,
}

/// Mask of voxels strictly greater than zero.
pub fn derive_mask(v: &Volume) -> Result<Vec<bool>> {
    let mask: Vec<bool> = v.voxels().data().iter().map(|&x| x > 0.0).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::data("cannot derive a mask: no voxel is > 0"));
    }
    Ok(mask)
}

/// Whitens with mean and population std taken over the mask.
///
/// A derived mask is stored on the result, so whitening twice reuses it.
pub fn whiten(v: &Volume) -> Result<Volume> {
    whiten_with(v, WhitenScope::AllVoxels)
}

pub fn whiten_with(v: &Volume, scope: WhitenScope) -> Result<Volume> {
    let mask = match v.mask() {
        Some(m) => m.to_vec(),
        None => derive_mask(v)?,
    };
    let data = v.voxels().data();
    let inside: Vec<f64> = data
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x as f64)
        .collect();
    if inside.len() < 2 {
        return Err(Error::data(format!(
            "whitening needs at least 2 mask voxels, got {}",
            inside.len()
        )));
    }
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let var = inside.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std < 1e-12 * mean.abs().max(1.0) {
        return Err(Error::DegenerateStats(format!(
            "mask std is {std} (mean {mean}) over {} voxels",
            inside.len()
        )));
    }
    let out: Vec<f32> = data
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| {
            if m || scope == WhitenScope::AllVoxels {
                ((x as f64 - mean) / std) as f32
            } else {
                x
            }
        })
        .collect();
    let voxels = Tensor::new(v.voxels().shape().to_vec(), out)?;
    Ok(v.clone().replace_voxels(voxels, Some(mask)))
}

/// Per-axis placement: (source start, destination start, length).
fn placement(vol: usize, crop: usize, corner: impl FnOnce(usize) -> usize) -> (usize, usize, usize) {
    if vol >= crop {
        (corner(vol - crop), 0, crop)
    } else {
        (0, (crop - vol) / 2, vol)
    }
}

fn crop_with(v: &Volume, shape: [usize; 3], mut corner: impl FnMut(usize) -> usize) -> Result<Volume> {
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::config(format!("crop extents must be >= 1, got {shape:?}")));
    }
    let dims = v.dims();
    let place: [(usize, usize, usize); 3] = std::array::from_fn(|a| placement(dims[a], shape[a], &mut corner));
    let [cd, ch, cw] = shape;
    let [_, vh, vw] = dims;
    let src = v.voxels().data();
    let src_mask = v.mask();
    let mut out = vec![0.0f32; cd * ch * cw];
    let mut out_mask = src_mask.map(|_| vec![false; out.len()]);
    let ((sd, dd, ld), (sh, dh, lh), (sw, dw, lw)) = (place[0], place[1], place[2]);
    for z in 0..ld {
        for y in 0..lh {
            let s = ((sd + z) * vh + sh + y) * vw + sw;
            let d = ((dd + z) * ch + dh + y) * cw + dw;
            out[d..d + lw].copy_from_slice(&src[s..s + lw]);
            if let (Some(om), Some(sm)) = (out_mask.as_mut(), src_mask) {
                om[d..d + lw].copy_from_slice(&sm[s..s + lw]);
            }
        }
    }
    Ok(v.clone().replace_voxels(Tensor::new(shape, out)?, out_mask))
}

/// Uniformly placed crop; axes shorter than the crop are zero-padded
/// symmetrically (extra voxel on the high side).
pub fn random_crop<R: Rng + ?Sized>(v: &Volume, shape: [usize; 3], rng: &mut R) -> Result<Volume> {
    crop_with(v, shape, |slack| rng.random_range(0..=slack))
}

pub fn center_crop(v: &Volume, shape: [usize; 3]) -> Result<Volume> {
    crop_with(v, shape, |slack| slack / 2)
}
