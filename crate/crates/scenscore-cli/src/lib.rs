//! Library surface of the CLI crate, exposed so integration and
//! acceptance tests can drive the pipeline without spawning processes.

pub mod commands;
pub mod config;
pub mod output;
