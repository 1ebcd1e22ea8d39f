//! Configuration parsing and command runners behind the `rmfg` binary.

pub mod config;
pub mod run;

pub use config::{Command, ConfigError, RunConfig};
pub use run::{run, RunError, Status};
