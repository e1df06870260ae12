//! Experiment harness for the conditional stochastic optimization library.

pub mod commands;
pub mod config;
pub mod output;
pub mod problems;

pub use commands::Failure;
pub use config::RunConfig;
