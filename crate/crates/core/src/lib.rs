//! Multi-objective generation with diffusion samplers.
//!
//! The crate provides an analytic Gaussian-mixture diffusion sampler
//! ([`diffusion`]), synthetic objectives ([`objectives`]), preference vectors
//! ([`preference`]), inference-time multi-target generation ([`img`]),
//! evolutionary baselines ([`ea`]), hypervolume metrics ([`metrics`]) and a
//! config-driven experiment runner ([`experiment`]).

pub mod diffusion;
pub mod ea;
pub mod error;
pub mod experiment;
pub mod img;
pub mod metrics;
pub mod objectives;
pub mod preference;
pub mod rng;

pub use error::{Error, Result};
