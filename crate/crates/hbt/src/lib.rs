//! File formats, configuration, parallel drivers, and the command-line
//! front end around [`hbt_core`].
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod fsio;
pub mod manifest;
pub mod parallel;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
