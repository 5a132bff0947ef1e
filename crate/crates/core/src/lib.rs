//! Multi-party ad hoc teamwork (MAHT) training core.
//!
//! Controlled agents learn to cooperate with several frozen teams of
//! uncontrolled agents whose conventions are mutually incompatible. The
//! pipeline has three learned stages:
//!
//! 1. [`agent_model`]: a recurrent encoder–decoder turns each agent's
//!    observation/action history into an embedding.
//! 2. [`skeleton`] + [`rfm`]: agents are linked in a sparse graph (complete
//!    inside every group, sampled representatives across groups) and a graph
//!    network runs edge/node/global message passing over it.
//! 3. [`policy`]: an actor–critic trained with independent PPO. The actor
//!    learns from controlled agents only; the critic from every agent.
//!
//! [`trainer`] wires these together and implements the ablation variants.
//! Everything here is `no_std` + `alloc` and fully deterministic given the
//! master seed; IO, file formats and the command line live in the companion
//! runner crate.

#![no_std]

extern crate alloc;

pub mod agent_model;
pub mod checks;
pub mod config;
pub mod env;
pub mod error;
pub mod numerics;
pub mod policy;
pub mod rfm;
pub mod rng;
pub mod rollout;
pub mod skeleton;
pub mod teams;
pub mod trainer;

pub use error::{Error, Result};
