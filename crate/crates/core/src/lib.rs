//! Face de-identification with identity/non-identity disentanglement,
//! trained and evaluated on procedurally generated faces.

pub mod error;
pub mod evalsuite;
pub mod gradcheck;
pub mod imageio;
pub mod latentops;
pub mod losses;
pub mod nets;
pub mod seeding;
pub mod synthfaces;
pub mod trainer;

pub use error::{Error, Result};
