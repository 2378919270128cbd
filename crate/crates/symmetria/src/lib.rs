//! Experiment runner for `symmetria-core`: JSON configs, IDX and checkpoint
//! files, run directories, a threaded executor and the `symmetria` CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;
pub mod run;

pub use error::{CliError, Result};
