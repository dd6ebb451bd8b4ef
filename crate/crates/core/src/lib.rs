//! Swarm reinforcement learning for adaptive mesh refinement.

pub mod env;
pub mod error_metrics;
pub mod fem;
pub mod geometry;
pub mod graphnet;
pub mod harness;
pub mod mesh;
pub mod problems;
pub mod rl;
pub mod rng;
