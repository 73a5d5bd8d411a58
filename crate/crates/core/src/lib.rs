//! Simulation and learning library for FDD multiuser MIMO-OFDM with learned
//! CSI feedback and multiuser precoding.

pub mod baselines;
pub mod batch;
pub mod channel;
pub mod config;
pub mod csi;
pub mod dataset;
pub mod eval;
pub mod feedback;
mod error;
pub mod linalg;
pub mod model;
pub mod precoder;
pub mod rate;
pub mod train;

pub use config::SystemConfig;
pub use error::{Error, Result};
