//! Encoder, mapping network, generator, discriminator and verifier.

pub mod arch;
mod config;
mod model;
pub mod persist;
mod pretrain;
mod types;

pub use config::{ModelConfig, VerifierConfig};
pub use model::{images_to_tensor, params_checksum, tensor_to_images, Model, Verifier};
pub use pretrain::{augment, pretrain_verifier, VerifierReport, VerifierTrainConfig};
pub use types::{IdCode, IdentityEmbedding, Image, SpatialCode, StyleVector};
