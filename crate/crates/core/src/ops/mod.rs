//! Forward and backward kernels on plain tensors. The tape in
//! [`crate::tape`] records calls to these and dispatches their gradients.

pub mod basic;
pub mod conv;
pub mod loss;
pub mod norm;

pub use basic::{add, global_avg_pool, linear, relu, sum, weighted_sum};
pub use conv::{conv3d, conv3d_backward, conv_output_extent, Conv3dGrads};
pub use loss::{mse_loss, softmax_cross_entropy, softmax_rows};
pub use norm::{instance_norm3d, instance_norm3d_backward, NormCache, DEFAULT_NORM_EPS};
