//! Command-line front end for the VLA pipeline: configuration, the
//! resumable batch runner and the analysis subcommands.

pub mod commands;
pub mod config;
pub mod runner;
