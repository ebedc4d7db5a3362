//! Experiment harness: JSON configs in, CSV series and a JSON manifest out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod experiment;
pub mod output;
pub mod plot;

use std::fmt;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiment::{execute, run_experiment, ResultManifest};
pub use plot::emit_plot_data;

/// Rejected configuration or arguments; exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A checked invariant failed during a run; exit code 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantViolation(pub String);

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for InvariantViolation {}

/// Process exit code for an error returned by the harness.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        2
    } else {
        1
    }
}
