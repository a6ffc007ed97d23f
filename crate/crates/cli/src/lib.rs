//! Config-driven runs, file ingestion and the verification suite behind the `ofw` binary.

pub mod config;
pub mod ingest;
pub mod output;
pub mod runner;

pub use config::{ConfigError, LoadedConfig, RunConfig};
pub use runner::{run_config, RunError, RunOutcome};
