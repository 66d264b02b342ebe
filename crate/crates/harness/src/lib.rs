//! Experiment orchestration for overlap statistics: configuration parsing,
//! theory and Monte Carlo pipelines, table comparison and run reports.

pub mod compare;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod tables;

pub use compare::{compare, compare_files, CompareOptions, ComparisonReport};
pub use config::{Experiment, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use pipeline::{run, Criterion, RunSummary};
pub use report::report;
