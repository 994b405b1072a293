//! Command-line front end for `maxwell-rb`: run configuration, the
//! subcommands and the benchmark report.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod report;
