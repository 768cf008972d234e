//! Simulation and mean-field analysis of bike-sharing networks where a
//! fraction of riders pick stations using live availability information.

pub mod diffusion;
pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod ingestion;
pub mod meanfield;
pub mod model;
pub mod simulator;

pub use error::{Error, Result};
