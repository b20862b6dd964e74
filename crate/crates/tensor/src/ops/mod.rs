//! Differentiable operations. Each function computes its output eagerly and
//! records a gradient rule on the input's tape.

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod norm;
pub mod shape;
pub mod spectral;

pub use conv::{conv3d, conv3d_forward, conv_transpose3d, conv_transpose3d_forward};
pub use elementwise::{add, leaky_relu, mul_scalar_var, relu, scale, tanh};
pub use linalg::{bmm, linear, linear_forward, softmax_last};
pub use norm::{
    batch_norm_eval, batch_norm_train, channel_affine, channel_stats, instance_norm, ChannelStats,
    INSTANCE_NORM_EPS, NORM_EPS,
};
pub use shape::{mix_rows, reshape, upsample_nearest};
pub use spectral::{power_iteration, spectral_normalize, SingularEstimate};
