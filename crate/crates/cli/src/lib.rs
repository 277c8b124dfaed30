//! Configuration and subcommands behind the `ccbo` binary.

pub mod commands;
pub mod config;
