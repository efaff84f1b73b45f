//! Sweep runner and command line for the policy mirror descent studies.

pub mod cli;
pub mod error;
pub mod output;
pub mod runner;
pub mod spec;

pub use error::RunError;
pub use output::{summarize, write_outputs, Record, Summary};
pub use runner::{run_experiment, run_experiment_with, RunOutput};
pub use spec::{ExperimentSpec, Study};
