//! Optimistic learning in average-reward linear mixture MDPs.

pub mod agent;
pub mod baselines;
pub mod config;
pub mod error;
pub mod evi;
pub mod hard_instance;
pub mod harness;
pub mod mdp;
pub mod numerics;
pub mod vtr;

pub use agent::Agent;
pub use error::{Error, Result};
