//! Library side of the `cotforge` command-line tool: config parsing,
//! artifact directories and the stage runners behind each subcommand.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod stages;
