//! Scenario-driven falsification of trajectory predictors: run
//! orchestration, predictor processes, file formats and the CLI.

pub mod bench;
pub mod canonical;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod library;
pub mod pool;
pub mod protocol;
pub mod replay;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
