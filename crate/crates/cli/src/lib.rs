//! Experiment orchestration for `lrcp`: TOML configs, JSONL result
//! records and CSV reports.

pub mod config;
pub mod ops;
pub mod record;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Operation};
pub use ops::{run_experiment, RunError};
pub use record::{ResultRecord, Status};

/// Exit status for a config that fails validation.
pub const EXIT_INVALID: u8 = 2;
/// Exit status for a run whose statistical outcome is inconclusive.
pub const EXIT_INCONCLUSIVE: u8 = 3;
