//! Experiment harness around `dqbrm-core`: configuration files, the model
//! registry, and the `run`, `benchmark`, `compare-rds` and `export-density`
//! commands with their CSV/JSON outputs.

pub mod commands;
pub mod config;
pub mod output;
pub mod registry;

use std::fmt;

/// A problem with the experiment configuration (exit status 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub(crate) fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Exit status for an error returned by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        1
    } else {
        2
    }
}
