//! Command-line harness for the DARE experiments.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod manifest;
