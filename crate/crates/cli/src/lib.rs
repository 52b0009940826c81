//! Command-line experiment runner: single runs, sharing sweeps, learning
//! curves, zero-shot transfer, evaluation and analysis.

pub mod args;
pub mod commands;
pub mod error;
pub mod plot;
pub mod results;
pub mod runner;
pub mod spec;

pub use error::{CliError, Result};
