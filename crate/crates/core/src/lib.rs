//! Packet-level discrete-event simulator for mobile ad hoc networks running
//! cluster-based source routing, with lowest-id (`cbrp`) or
//! aggregate-mobility (`cross-cbrp`) cluster head election.
//!
//! A run is fully determined by its [`config::ScenarioConfig`]; see
//! [`engine::run_simulation`] for a single run and [`runner::run_plan`] for
//! sweeps.

pub mod channel;
pub mod clustering;
pub mod config;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod mobility;
pub mod rng;
pub mod routing;
pub mod runner;
pub mod traffic;

pub use config::{parse_config, ConfigBuilder, Protocol, ScenarioConfig};
pub use engine::{run_simulation, SimOptions, SimOutcome};
