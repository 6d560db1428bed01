//! Front end for the `dsct` command: configuration, file formats and the
//! subcommands. The binary is a thin argument parser over this library.

pub mod commands;
pub mod config;
pub mod failure;
pub mod files;

pub use config::LoadedConfig;
pub use failure::{CliResult, Failure};
