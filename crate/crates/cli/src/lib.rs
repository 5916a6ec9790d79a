//! Subcommand implementations for the `shaped-pick` binary.

pub mod commands;

pub use commands::{analyze, compare, rollout, train, CompareRow};
