//! Seeded synthetic volumes for desk-scale experiments.
//!
//! * `texture_regression`: inside a spherical mask, voxels are
//!   `1 + sqrt(y * (max_var - min_var)) * smooth + sqrt(min_var) * white`
//!   where `smooth` is unit-variance Gaussian-blurred noise and `white` is
//!   unit white noise. The target `y ~ U[0, 1]` sets the share of spatially
//!   correlated variance, which survives whitening.
//! * `texture_classification`: class `c` fills the sphere with unit-variance
//!   noise blurred at `class_sigmas[c]`.
//! * `global_structure`: two Gaussian blobs on a noisy background, centered in
//!   two different octants whose relation ([`BlobPairing`]) sets the class.
//!   Each blob's octant is uniform in both classes, so any patch that sees at
//!   most one blob has the same distribution under either label.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::volume::{SubjectMeta, Volume};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    TextureRegression,
    TextureClassification,
    GlobalStructure,
}

impl SyntheticTask {
    pub fn is_classification(self) -> bool {
        !matches!(self, Self::TextureRegression)
    }

    fn min_extent(self) -> usize {
        match self {
            Self::GlobalStructure => 16,
            _ => 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub min_variance: f64,
    pub max_variance: f64,
    pub smoothing_sigma: f64,
    pub class_sigmas: [f64; 2],
    pub class_variance: f64,
    pub blob_sigma: f64,
    pub blob_amplitude: f64,
    pub background_std: f64,
    pub position_jitter: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            min_variance: 0.25,
            max_variance: 2.25,
            smoothing_sigma: 1.0,
            class_sigmas: [0.6, 1.5],
            class_variance: 1.0,
            blob_sigma: 1.5,
            blob_amplitude: 3.0,
            background_std: 0.25,
            position_jitter: 1,
        }
    }
}

/// How the two blobs of a `global_structure` volume relate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobPairing {
    /// Octants differ along x only (class 0) or along z only (class 1).
    #[default]
    Orientation,
    /// Octants differ along one random axis (class 0) or along all three (class 1).
    AdjacentOpposite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub volume_shape: [usize; 3],
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub pairing: BlobPairing,
}

impl SyntheticSpec {
    pub fn new(task: SyntheticTask, volume_shape: [usize; 3], samples: usize, seed: u64) -> Self {
        Self {
            task,
            volume_shape,
            samples,
            seed,
            noise: NoiseParams::default(),
            pairing: BlobPairing::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min = self.task.min_extent();
        if self.volume_shape.iter().any(|&e| e < min) {
            return Err(Error::config(format!(
                "{:?} needs every extent >= {min}, got {:?}",
                self.task, self.volume_shape
            )));
        }
        if self.samples == 0 {
            return Err(Error::config("sample count must be >= 1"));
        }
        let n = &self.noise;
        if !(n.min_variance > 0.0 && n.max_variance >= n.min_variance) {
            return Err(Error::config(format!(
                "need 0 < min_variance <= max_variance, got {} and {}",
                n.min_variance, n.max_variance
            )));
        }
        let sigmas = [n.smoothing_sigma, n.class_sigmas[0], n.class_sigmas[1], n.blob_sigma];
        if sigmas.iter().any(|&s| !(s > 0.0)) || !(n.class_variance > 0.0) || !(n.background_std >= 0.0) {
            return Err(Error::config("noise sigmas and variances must be positive"));
        }
        Ok(())
    }
}

/// A generated volume and its label (`y` for regression, class index otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub volume: Volume,
    pub target: f64,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    (0..spec.samples).map(|i| generate_one(spec, i)).collect()
}

/// Sample `index` of the dataset described by `spec`; independent of all others.
pub fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<SyntheticSample> {
    spec.validate()?;
    let mut r = rng::indexed_stream(spec.seed, rng::SYNTH, index as u64);
    let shape = spec.volume_shape;
    let n = &spec.noise;
    let (voxels, mask, target) = match spec.task {
        SyntheticTask::TextureRegression => {
            let y: f64 = r.random();
            let smooth = blurred_noise(shape, n.smoothing_sigma, &mut r);
            let white = white_noise(shape, &mut r);
            let a = (y * (n.max_variance - n.min_variance)).sqrt();
            let b = n.min_variance.sqrt();
            let values: Vec<f64> = smooth.iter().zip(&white).map(|(s, w)| 1.0 + a * s + b * w).collect();
            let mask = sphere_mask(shape);
            (masked(values, &mask), mask, y)
        }
        SyntheticTask::TextureClassification => {
            let class = index % 2;
            let smooth = blurred_noise(shape, n.class_sigmas[class], &mut r);
            let a = n.class_variance.sqrt();
            let values: Vec<f64> = smooth.iter().map(|s| 1.0 + a * s).collect();
            let mask = sphere_mask(shape);
            (masked(values, &mask), mask, class as f64)
        }
        SyntheticTask::GlobalStructure => {
            let class = index % 2;
            let first: usize = r.random_range(0..8);
            let second = match (spec.pairing, class) {
                (BlobPairing::Orientation, 0) => first ^ 0b001,
                (BlobPairing::Orientation, _) => first ^ 0b100,
                (BlobPairing::AdjacentOpposite, 0) => first ^ (1 << r.random_range(0..3)),
                (BlobPairing::AdjacentOpposite, _) => first ^ 0b111,
            };
            let mut values: Vec<f64> = white_noise(shape, &mut r)
                .into_iter()
                .map(|w| 1.0 + n.background_std * w)
                .collect();
            for octant in [first, second] {
                let jitter = n.position_jitter as i64;
                let center: [f64; 3] = std::array::from_fn(|a| {
                    let bit = (octant >> (2 - a)) & 1;
                    let base = if bit == 0 { shape[a] / 4 } else { 3 * shape[a] / 4 };
                    (base as i64 + r.random_range(-jitter..=jitter)) as f64
                });
                let amplitude = n.blob_amplitude * r.random_range(0.8..1.2);
                add_blob(&mut values, shape, center, n.blob_sigma, amplitude);
            }
            (values, vec![true; shape.iter().product()], class as f64)
        }
    };
    let data: Vec<f32> = voxels.into_iter().map(|v| v as f32).collect();
    let mut meta = SubjectMeta {
        id: format!("{:?}-{index:05}", spec.task).to_lowercase(),
        ..SubjectMeta::default()
    };
    if spec.task.is_classification() {
        meta.sex = Some(target as u8);
    } else {
        meta.age = Some(target);
    }
    let volume = Volume::new(Tensor::new(shape, data)?)?.with_mask(mask)?.with_meta(meta);
    Ok(SyntheticSample { volume, target })
}

fn masked(values: Vec<f64>, mask: &[bool]) -> Vec<f64> {
    values.into_iter().zip(mask).map(|(v, &m)| if m { v } else { 0.0 }).collect()
}

/// Ball of radius `0.45 * min extent` around the volume center.
pub fn sphere_mask(shape: [usize; 3]) -> Vec<bool> {
    let radius = 0.45 * *shape.iter().min().expect("three extents") as f64;
    let center = shape.map(|e| (e as f64 - 1.0) / 2.0);
    let mut mask = Vec::with_capacity(shape.iter().product());
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let d2 = [z, y, x]
                    .iter()
                    .zip(&center)
                    .map(|(&i, &c)| (i as f64 - c).powi(2))
                    .sum::<f64>();
                mask.push(d2 <= radius * radius);
            }
        }
    }
    mask
}

fn white_noise(shape: [usize; 3], r: &mut StreamRng) -> Vec<f64> {
    (0..shape.iter().product::<usize>()).map(|_| r.sample(StandardNormal)).collect()
}

/// White noise blurred with a separable Gaussian, rescaled to unit variance.
fn blurred_noise(shape: [usize; 3], sigma: f64, r: &mut StreamRng) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let gain = kernel.iter().map(|k| k * k).sum::<f64>().powi(3).sqrt();

    let mut dims = shape.map(|e| e + 2 * radius);
    let mut buf = white_noise(dims, r);
    for axis in 0..3 {
        let mut out_dims = dims;
        out_dims[axis] = shape[axis];
        let strides = [dims[1] * dims[2], dims[2], 1];
        let mut out = Vec::with_capacity(out_dims.iter().product());
        for z in 0..out_dims[0] {
            for y in 0..out_dims[1] {
                for x in 0..out_dims[2] {
                    let base = z * strides[0] + y * strides[1] + x * strides[2];
                    let acc: f64 = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w * buf[base + k * strides[axis]])
                        .sum();
                    out.push(acc / if axis == 2 { gain } else { 1.0 });
                }
            }
        }
        buf = out;
        dims = out_dims;
    }
    buf
}

fn add_blob(values: &mut [f64], shape: [usize; 3], center: [f64; 3], sigma: f64, amplitude: f64) {
    let reach = (4.0 * sigma).ceil() as i64;
    let lo = center.map(|c| (c as i64 - reach).max(0) as usize);
    let hi: [usize; 3] = std::array::from_fn(|a| ((center[a] as i64 + reach) as usize).min(shape[a] - 1));
    for z in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for x in lo[2]..=hi[2] {
                let d2 = (z as f64 - center[0]).powi(2) + (y as f64 - center[1]).powi(2) + (x as f64 - center[2]).powi(2);
                values[(z * shape[1] + y) * shape[2] + x] += amplitude * (-0.5 * d2 / (sigma * sigma)).exp();
            }
        }
    }
}
