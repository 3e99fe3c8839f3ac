//! Experiment orchestration for the consolidation engine: config format,
//! per-task training runner with artifact persistence, and the drift
//! probe. The `intact` binary is a thin layer over this library.

pub mod config;
pub mod drift;
pub mod runner;

pub use config::{DatasetKind, ExperimentConfig, MaskPolicy, Method};
pub use runner::{
    eval_checkpoint, resume_single, run_experiment, run_single, RunRecord, RunnerError,
};
