//! Command-line tools and the HTTP JSON service.

pub mod api;
pub mod cli;
pub mod wire;
