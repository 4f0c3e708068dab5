//! Experiment harness around `protolearn-core`: dataset manifests,
//! synthetic data generation, WAV and feature-cache IO, the full
//! base-plus-incremental session protocol, metrics reporting, and the
//! `protolearn` command-line interface.

pub mod cache;
pub mod config;
pub mod embedfile;
pub mod error;
pub mod manifest;
pub mod protocol;
pub mod report;
pub mod synth;
pub mod wav;

pub use error::{HarnessError, Result};
