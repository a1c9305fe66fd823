//! Config-driven orchestration of the hospitalization-risk pipeline with a
//! content-hashed stage manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use manifest::{Manifest, ManifestEntry};
pub use pipeline::{Command, Pipeline};
