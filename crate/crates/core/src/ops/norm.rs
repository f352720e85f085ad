//! Instance normalization over the spatial voxels of each (sample, channel).

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub(crate) xhat: Vec<T>,
    pub(crate) inv_std: Vec<f64>,
}

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<[usize; 5]> {
    let dims = x.dims5()?;
    let c = dims[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "instance norm affine shapes {:?}/{:?}, expected [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(dims)
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` with population variance
/// taken over the D*H*W voxels of each (n, c).
pub fn instance_norm3d<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("instance norm eps must be > 0, got {eps}")));
    }
    let [n, c, d, h, w] = check(x, gamma, beta)?;
    let m = d * h * w;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(n * c);
    for (slot, src) in x.data().chunks_exact(m).enumerate() {
        let ch = slot % c;
        let mean = src.iter().fold(0.0, |a, v| a + v.as_f64()) / m as f64;
        let var = src.iter().fold(0.0, |a, v| {
            let dv = v.as_f64() - mean;
            a + dv * dv
        }) / m as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        let base = slot * m;
        for (i, v) in src.iter().enumerate() {
            let xh = T::from_f64((v.as_f64() - mean) * inv);
            xhat[base + i] = xh;
            y[base + i] = g * xh + b;
        }
    }
    Ok((
        Tensor::from_parts_unchecked(x.shape().to_vec(), y),
        NormCache { xhat, inv_std },
    ))
}

pub struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Backward of [`instance_norm3d`].
///
/// With `detach_stats` the per-instance mean and variance are treated as
/// constants, which leaves only the voxel-local path `gamma * inv_std * dy`.
pub fn instance_norm3d_backward<T: Real>(
    cache: &NormCache<T>,
    shape: &[usize],
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    detach_stats: bool,
) -> Result<NormGrads<T>> {
    if grad_out.shape() != shape {
        return Err(Error::shape("instance norm upstream gradient shape mismatch"));
    }
    let c = shape[1];
    let m: usize = shape[2..].iter().product();
    let mut gx = vec![T::zero(); grad_out.len()];
    let mut gg = vec![0.0f64; c];
    let mut gb = vec![0.0f64; c];
    for (slot, dy) in grad_out.data().chunks_exact(m).enumerate() {
        let ch = slot % c;
        let base = slot * m;
        let xh = &cache.xhat[base..base + m];
        let g = gamma.data()[ch].as_f64();
        let inv = cache.inv_std[slot];
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for (a, b) in dy.iter().zip(xh) {
            sum_dy += a.as_f64();
            sum_dy_xh += a.as_f64() * b.as_f64();
        }
        gg[ch] += sum_dy_xh;
        gb[ch] += sum_dy;
        let out = &mut gx[base..base + m];
        if detach_stats {
            let scale = g * inv;
            for (o, a) in out.iter_mut().zip(dy) {
                *o = T::from_f64(scale * a.as_f64());
            }
        } else {
            let mean_dy = sum_dy / m as f64;
            let mean_dy_xh = sum_dy_xh / m as f64;
            for ((o, a), b) in out.iter_mut().zip(dy).zip(xh) {
                let v = a.as_f64() - mean_dy - b.as_f64() * mean_dy_xh;
                *o = T::from_f64(g * inv * v);
            }
        }
    }
    Ok(NormGrads {
        input: Tensor::from_parts_unchecked(shape.to_vec(), gx),
        gamma: Tensor::from_parts_unchecked(vec![c], gg.into_iter().map(T::from_f64).collect()),
        beta: Tensor::from_parts_unchecked(vec![c], gb.into_iter().map(T::from_f64).collect()),
    })
}
