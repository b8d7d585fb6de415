//! Configuration files, exported artifacts and run manifests.

pub mod config;
pub mod export;
pub mod manifest;

pub use config::{parse_config, RunConfig, Setup};
pub use manifest::RunManifest;
