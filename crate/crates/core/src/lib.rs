//! Finite invariant self-supervised learning worlds: equivalence structures,
//! encoders, probe families, ERM risk laws and small ISSL objectives.

pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod probes;
pub mod risk;
pub mod rng;
pub mod synthetic;
pub mod tasks;
pub mod world;

pub use error::{Error, Result};
