//! Config-driven evaluation of location-privacy mechanisms on crowdsensed
//! measurement data.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, ErrorKind, Stage};
pub use manifest::RunManifest;
pub use pipeline::run_pipeline;
