//! Crowd simulation with risk-aware trajectory planning for an automated
//! vehicle.
//!
//! Pedestrians follow precomputed policy fields under a social-force model;
//! the vehicle samples Frenet trajectories and rejects those whose harm or
//! risk against Gaussian pedestrian predictions exceeds configured limits.

pub mod fixtures;
pub mod geom;
pub mod pedsim;
pub mod planner;
pub mod policy;
pub mod prediction;
pub mod render;
pub mod risk;
pub mod scenario;
pub mod simloop;
