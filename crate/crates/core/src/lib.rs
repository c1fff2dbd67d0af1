//! Exact and Monte Carlo computations for the generalized Poland-Scheraga
//! model of DNA denaturation with strands of unequal length.

pub mod acceptance;
pub mod asymptotics;
pub mod error;
pub mod free_energy;
pub mod loop_law;
pub mod numerics;
pub mod partition;
pub mod path_stats;
pub mod sampler;
pub mod scaled;

pub use error::{GpsError, Result};
