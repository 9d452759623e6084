//! Config-driven experiment runner for the `mvpp` binary.

pub mod config;
pub mod error;
pub mod runner;
pub mod zoo;

pub use config::{parse_config, parse_suite, ExperimentConfig, Mode, SuiteEntry};
pub use error::{CliError, Result, EXIT_IO, EXIT_MODEL, EXIT_OK, EXIT_TOLERANCE};
pub use runner::{accept, accept_path, accept_suite, qsd_oracle, run, sweep, Overrides, Summary};
