//! 3D bag-of-local-features networks on a from-scratch CPU tensor engine.
//!
//! The crate covers the whole pipeline: a dense tensor type with reverse-mode
//! autodiff ([`tensor`], [`tape`], [`ops`]), the receptive-field-controlled
//! bottleneck family ([`architecture`]), Adam with gradient accumulation
//! ([`optim`]), volume ingestion and synthetic data ([`data`]), localized
//! prediction maps ([`heatmap`]) and the training/evaluation loop
//! ([`train`]).

pub mod architecture;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod task;
pub mod tensor;
pub mod train;

pub use architecture::{
    build_bagnet3d, compute_receptive_field, count_params, BagNetConfig, ForwardOptions,
    ForwardOutput, Mode, Model, ReceptiveField, Variant,
};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use heatmap::{local_predictions, to_probability_map, PredictionMap};
pub use optim::{lr_at, Accumulator, AdamHyper, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use task::Task;
pub use tensor::{Precision, Real, Tensor};
