//! Ising spin-glass benchmark toolkit for Chimera topologies.
//!
//! The crate generates disorder realizations for the U1, U4, U567 and S28
//! instance classes, finds ground states either exactly (small systems) or
//! with parallel tempering plus isoenergetic cluster moves, and measures how
//! robust those ground states are to quenched Gaussian coupler and field
//! noise.

pub mod error;
pub mod instances;
pub mod mining;
pub mod model;
pub mod oracle;
pub mod seeds;
pub mod resilience;
pub mod solver;
pub mod stats;
pub mod topology;

pub use error::{Error, Result};
pub use instances::{Instance, InstanceClass};
pub use model::SpinConfig;
pub use topology::Graph;
