//! Storage, configuration and orchestration around `scribe-core`.
//!
//! Everything that touches the filesystem lives here: the `.stk` tensor
//! format, session CSVs, checkpoints, run manifests and the four pipeline
//! commands driven by the `scribe` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
mod failure;
pub mod manifest;
pub mod session_io;
pub mod stk;

pub use config::ExperimentConfig;
pub use failure::{Failure, StageExt};
