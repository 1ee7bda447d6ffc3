//! Batch runner for weighted Bergman kernel experiments.
//!
//! A run reads one TOML config, executes the named experiment, writes one CSV
//! per table plus a JSON manifest, and reports whether every asserted
//! invariant held.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{parse_config, ExperimentConfig, ParseError};
pub use experiments::{execute, RunManifest, RunOutput, Table};
pub use output::write_outputs;
