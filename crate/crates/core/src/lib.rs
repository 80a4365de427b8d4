//! Deterministic discrete-event simulator of serverless control planes.

pub mod bundled;
pub mod cluster;
pub mod config;
pub mod dist;
pub mod engine;
pub mod expedited;
pub mod experiment;
pub mod ids;
pub mod kernel;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod time;
pub mod workload;
