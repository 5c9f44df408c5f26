//! Command-line front end for in-situ workflow experiments.

pub mod commands;
pub mod config;
pub mod manifest;
