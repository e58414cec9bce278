//! Command-line front end: task generation, training arms, test-time policy
//! refinement, inference, evaluation and policy export.

pub mod commands;
pub mod export;
pub mod overrides;

pub use commands::{run, Cli, Command};
