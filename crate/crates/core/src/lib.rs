//! Dataset-replay driving simulation with an A* pseudo-expert and an
//! iterative data-aggregation loop for imitation driving policies.

pub mod dagger;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod planner;
pub mod policy;
pub mod refine;
pub mod simulator;

pub use error::{Error, Result};
