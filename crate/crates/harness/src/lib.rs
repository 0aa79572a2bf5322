//! Experiment harness for self-guided minority sampling: configuration,
//! built-in benchmarks, MLP checkpoints, experiment runs with CSV/JSON
//! reports, and named recipes.

pub mod benchmarks;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod recipes;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{execute, prepare, run_experiment, RunReport};
