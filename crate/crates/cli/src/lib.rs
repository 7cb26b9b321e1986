//! Config-driven experiments for discrete Langevin samplers: config parsing
//! and validation, experiment runners, CSV outputs and the `oracle` dump.

pub mod build;
pub mod config;
pub mod experiments;
pub mod oracle_cmd;
pub mod output;

pub use config::{validate_config, ConfigIssue, ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, RunOptions, RunReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
