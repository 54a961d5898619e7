//! Discrete-event simulator for reactive, reliability-aware flow installation in a
//! software-defined network.

pub mod controller;
pub mod dataplane;
pub mod engine;
pub mod metrics;
pub mod pathfinder;
pub mod reliability;
pub mod topology;
