//! Generative adversarial models of healthy lung-CT patches: data pipeline,
//! three 3D generator families, a shared discriminator with minibatch
//! discrimination, training, and the evaluation suite (Fréchet distances,
//! skeleton branch statistics, latent embeddings).

pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generators;
pub mod latent_analysis;
pub mod losses;
pub mod minibatch_tools;
pub mod nn;
pub mod patch_pipeline;
pub mod structure_analysis;
pub mod training;

pub use error::{Error, Result};
pub use lunggan_tensor::{parallel, Tensor};
