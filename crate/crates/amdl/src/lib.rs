//! File formats, reports and the `amdl` command-line harness built on
//! [`amdl_core`].

mod binio;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod history;
pub mod report;
pub mod run_config;

pub use error::{AppError, AppResult, ExitCode, FormatError};
