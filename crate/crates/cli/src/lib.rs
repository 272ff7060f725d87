//! Config-driven experiment runner: `prepare` splits the data, `train`
//! runs an experiment end to end, and `predict`, `evaluate` and `report`
//! redo individual stages.

pub mod config;
pub mod error;
pub mod experiment;
pub mod prepare;
mod staging;

pub use config::ExperimentConfig;
pub use error::{exit, CliError, CliResult};
pub use experiment::{run_evaluate, run_experiment, run_predict, run_report, RunSummary, Scores};
pub use prepare::{run_prepare, PrepareSummary};
