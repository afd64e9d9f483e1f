//! Batch front end: solve, audit, decompose, district pipelines and property campaigns.

pub mod campaign;
pub mod commands;
pub mod config;

pub use commands::{cmd_check, cmd_decompose, cmd_district, cmd_solve, Outcome};
pub use config::{Method, RunConfig};
