//! Deterministic discrete-event emulator for serverless data pipelines
//! spread over edge, fog and cloud tiers.

pub mod analyzer;
pub mod backend;
pub mod config;
pub mod error;
pub mod faas;
pub mod grid;
pub mod kernel;
pub mod ledger;
pub mod log;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod workloads;

pub use error::{Result, SimError};
