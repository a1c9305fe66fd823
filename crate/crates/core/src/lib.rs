//! Hospitalization-risk prediction pipeline for COVID-19 EHR cohorts.

pub mod catalog;
pub mod cohort;
pub mod error;
pub mod explain;
pub mod features;
pub mod models;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod records;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
