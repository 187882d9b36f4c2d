//! End-to-end consistency runs: generate prompts, query a backend with
//! resumable progress, and write metric reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod store;
pub mod svg;

pub use config::{LoadedConfig, RunConfig};
pub use error::{CliError, CliResult};
