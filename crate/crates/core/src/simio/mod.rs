//! Ingestion, configuration, output emission and command runners.

pub mod commands;
pub mod config;
pub mod data;
pub mod output;

pub use config::RunConfig;
pub use data::{load_trips, synth_trips, DatasetSummary, OdModel, SynthProfile, TripDataset, TripRecord};
