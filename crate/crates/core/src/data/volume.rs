use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Subject annotations. Sex uses 0 for male and 1 for female.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: String,
    pub age: Option<f64>,
    pub sex: Option<u8>,
}

/// A single-channel 3D scan, stored `[D, H, W]` with W fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxels: Tensor<f32>,
    spacing_mm: [f64; 3],
    mask: Option<Vec<bool>>,
    pub meta: SubjectMeta,
}

impl Volume {
    pub fn new(voxels: Tensor<f32>) -> Result<Self> {
        if voxels.rank() != 3 {
            return Err(Error::shape(format!(
                "volume must be rank 3, got {:?}",
                voxels.shape()
            )));
        }
        Ok(Self {
            voxels,
            spacing_mm: [1.0; 3],
            mask: None,
            meta: SubjectMeta::default(),
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.voxels.len() {
            return Err(Error::shape(format!(
                "mask has {} voxels, volume {:?} has {}",
                mask.len(),
                self.voxels.shape(),
                self.voxels.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_spacing(mut self, spacing_mm: [f64; 3]) -> Result<Self> {
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::data(format!("voxel spacing must be > 0, got {spacing_mm:?}")));
        }
        self.spacing_mm = spacing_mm;
        Ok(self)
    }

    pub fn with_meta(mut self, meta: SubjectMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn voxels(&self) -> &Tensor<f32> {
        &self.voxels
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.voxels.shape();
        [s[0], s[1], s[2]]
    }

    pub(crate) fn replace_voxels(mut self, voxels: Tensor<f32>, mask: Option<Vec<bool>>) -> Self {
        self.voxels = voxels;
        self.mask = mask;
        self
    }

    /// The volume as a `[1, 1, D, H, W]` network input.
    pub fn to_input<T: Real>(&self) -> Tensor<T> {
        let [d, h, w] = self.dims();
        Tensor::new([1, 1, d, h, w], self.voxels.data().iter().map(|&v| T::from_f64(v as f64)).collect())
            .expect("volume extents are valid")
    }
}
