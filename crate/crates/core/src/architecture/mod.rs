//! The 3D bag-of-local-features family: bottleneck residual networks whose
//! receptive field is set by where 3x3x3 middle convs are placed.

mod config;
mod model;
mod receptive_field;

pub use config::{BagNetConfig, NormKind, Variant};
pub use model::{
    build_bagnet3d, count_backbone_params, count_params, ForwardOptions, ForwardOutput, Mode,
    Model, Param, ParamKind,
};
pub use receptive_field::{compute_receptive_field, ReceptiveField, RfLayer};
