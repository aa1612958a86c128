//! Simulation and optimization engine for an autonomous electric
//! ride-sharing fleet: dispatch, recharging and repositioning through
//! approximate dynamic programming, Bayesian surge pricing, and fleet-size
//! economics.

pub mod adp;
pub mod assignment;
pub mod economics;
pub mod error;
pub mod fleet;
pub mod oracle;
pub mod pricing;
pub mod simio;
pub mod spatial;
pub mod vfa;

pub use error::{Error, Result};
