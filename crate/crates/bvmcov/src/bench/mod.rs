//! Experiment harness: scenario configuration, truth generators, runners
//! for each study, and reproducible reporting.

pub mod config;
pub mod report;
pub mod runner;
pub mod selftest;
pub mod truth;

pub use config::ExperimentConfig;
pub use runner::{execute, run, RunOutcome, Subcommand};
