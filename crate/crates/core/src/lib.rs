//! Simulator for a two-layer mobile network: mobile access points (MAPs) steer
//! themselves with a distributed potential-based controller to cover mobile
//! smart devices (MSDs) while staying linked to each other.
//!
//! Module map:
//! - [`kernels`]: bump, σ-norm, sigmoid and action function
//! - [`graph`] / [`eigen`]: MAP link graph, Laplacian, Fiedler value, epidemic bound
//! - [`association`]: MSD matching, coverage, Lloyd clustering
//! - [`controller`]: per-MAP control input
//! - [`sim`]: scenario engine and the per-step feedback loop
//! - [`config`], [`output`], [`analysis`], [`cli`]: configuration, file formats, sweeps and the driver

pub mod analysis;
pub mod association;
pub mod cli;
pub mod config;
pub mod controller;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod output;
pub mod sim;
pub mod state;
pub mod vec2;

pub use config::{load_config, ScenarioConfig};
pub use error::{ConfigError, ParamError, SimError};
pub use sim::{run_scenario, MetricsRecord, RunObserver, RunSummary, Simulation};
pub use state::{MapState, MsdState};
pub use vec2::Vec2;
