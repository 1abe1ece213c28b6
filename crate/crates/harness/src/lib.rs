//! Experiment grids, reports, self-tests and acceptance criteria for `ebm-ssl`.

pub mod config;
pub mod criteria;
pub mod error;
pub mod grid;
pub mod oracles;
pub mod reference;
pub mod report;
pub mod selftest;
pub mod tasks;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
