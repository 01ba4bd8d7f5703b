//! Config-driven experiment harness for the `props` binary.

pub mod commands;
pub mod config;
pub mod harness;
pub mod report;

pub use config::{ExperimentConfig, MethodSpec, TrainOverrides};
pub use harness::{execute, Grid, Outcome};
