//! Scenario runner: parse a scenario file, simulate it and write traces,
//! sync logs and precision reports.

pub mod app;
pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{parse_scenario, ConfigError, Scenario};
pub use error::CliError;
