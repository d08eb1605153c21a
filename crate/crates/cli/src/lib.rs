//! Orchestration for the sparse-tracking full-body pipeline: configuration,
//! end-to-end inference, evaluation reports, plots and run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod workspace;

pub use commands::{run, Command};
pub use config::{Mode, Overrides, PipelineConfig};
pub use error::{CliError, Result};
pub use workspace::Workspace;
