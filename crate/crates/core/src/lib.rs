//! Simulator for Byzantine-resilient random walks, almost-everywhere
//! broadcast, an almost-everywhere common coin and randomized agreement on
//! sparse regular expanders.

pub mod adversary;
pub mod aerid;
pub mod agreement;
pub mod coin;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod setting;
pub mod sweep;
pub mod transcript;
pub mod walk;

pub use config::ExperimentConfig;
pub use error::{Result, SimError};
pub use graph::{Graph, NodeId, NodeSet};
