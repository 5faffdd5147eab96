//! Age-of-information tail control for vehicle-to-vehicle links.
//!
//! The crate bundles a seeded, time-slotted network simulator with the
//! optimization pieces it drives every slot:
//!
//! - [`config`]: parameters, defaults and derived constants
//! - [`mobility`]: Manhattan-grid vehicle motion with fixed tx/rx pairs
//! - [`channel`]: path loss, fading, Shannon and finite-blocklength rates
//! - [`traffic`]: arrivals, the FCFS fluid queue and per-packet AoI
//! - [`aoi_mapping`]: AoI violation events mapped onto transmitter state
//! - [`evt`]: generalized Pareto tail modelling and fitting
//! - [`clustering`]: spectral grouping of pairs and RB assignment
//! - [`lyapunov`]: virtual queues, water-filling and the convex-concave loop
//! - [`simulator`]: the slot loop, metrics, sweeps and report files

pub mod aoi_mapping;
pub mod channel;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evt;
pub mod lyapunov;
pub mod mobility;
pub mod rng;
pub mod simulator;
pub mod traffic;

pub use config::{DerivedParams, SimConfig};
pub use error::{Error, Result};
pub use simulator::{run, MetricsReport, Summary};
