//! Experiment harness: configs, runs, sweeps, verification suites and
//! post-hoc analysis on top of `grokflow-core`.

pub mod analyze;
pub mod config;
pub mod error;
pub mod instance;
pub mod recipes;
pub mod report;
pub mod run;
pub mod schema;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{HarnessError, HarnessResult};
pub use report::RunReport;
