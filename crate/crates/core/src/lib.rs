//! Fracture cluster options (FraCOs) on tabular grid-worlds.
//!
//! The pipeline mines fixed-length action windows ("fractures") from
//! successful trajectories, groups them into clusters, ranks the clusters by
//! expected usefulness and turns the best ones into options. Repeating the
//! process on trajectories that already use options grows a multi-level
//! hierarchy.

pub mod agent;
pub mod cli;
pub mod clustering;
pub mod experiments;
pub mod fracture;
pub mod gridworld;
pub mod options;
pub mod rng;
pub mod usefulness;
