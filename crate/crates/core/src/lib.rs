//! Discrete-event simulator for a vehicle reporting emissions to a grid of
//! roadside base stations over a multi-hop wireless network.

pub mod app;
pub mod energy;
pub mod engine;
pub mod error;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod phy;
pub mod report;
pub mod routing;
pub mod scenario;
pub mod sim;

pub use error::{ConfigError, Error, Result};
