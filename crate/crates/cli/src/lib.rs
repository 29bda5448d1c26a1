//! Command-line driver: one subcommand per stage plus `pipeline`, which runs
//! every stage from a single JSON config and records a manifest of seeds,
//! timings and output digests.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod stages;

pub use commands::{run, Cli, Command};
pub use config::{DatasetSource, PipelineConfig, ResolvedSeeds, StageSeeds, SynthSpec};
pub use manifest::Manifest;
pub use pipeline::{exit_code, run_pipeline, PipelineOutcome, StageError};
