//! Dense `f64` tensors with tape-based reverse-mode differentiation and the
//! 3D convolution kernels needed by volumetric GANs.
//!
//! Kernels parallelise over the batch axis with rayon when the `parallel`
//! feature is on (the default). Reductions use a fixed grouping, so the
//! sequential build and the parallel build agree bit for bit.

pub mod init;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod tape;
mod tensor;

pub use kernels::ConvGeometry;
pub use optim::Adam;
pub use params::{Bound, ParamId, ParamStore, Parameter};
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::Tensor;
