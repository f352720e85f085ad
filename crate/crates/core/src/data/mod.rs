//! Volume ingestion, preprocessing, dataset splitting and synthetic data.

mod manifest;
pub mod nifti;
mod preprocess;
pub mod rawvol;
mod split;
mod synthetic;
mod volume;

pub use manifest::{load_mask, load_volume, Manifest, ManifestEntry};
pub use nifti::{parse_nifti1, write_nifti1, NiftiHeader};
pub use preprocess::{center_crop, derive_mask, random_crop, whiten, whiten_with, WhitenScope};
pub use rawvol::{parse_rawvol, write_rawvol_f32, write_rawvol_mask, RawVolHeader};
pub use split::{split_dataset, split_sizes, Split};
pub use synthetic::{
    generate_one, generate_synthetic, sphere_mask, BlobPairing, NoiseParams, SyntheticSample, SyntheticSpec,
    SyntheticTask,
};
pub use volume::{SubjectMeta, Volume};
