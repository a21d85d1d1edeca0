//! Procedural face dataset with known identity and non-identity factors.

mod dataset;
mod factors;
mod render;

pub use dataset::{generate_dataset, sample_id, DatasetManifest, Sample, DATASET_FILE, MANIFEST_FILE};
pub use factors::{identity_factors, nonid_factors, sample_factors, Attributes, FactorLabel, IdentityFactors, NonIdFactors};
pub use render::{mouth_region, render_face, SUPPORTED_SIZES};
