//! File formats, configuration and command implementations behind the
//! `derm` binary.

pub mod ckpt;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod report;

pub use error::{CliError, CliResult};
