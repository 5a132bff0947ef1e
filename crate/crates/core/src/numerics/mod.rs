//! Minimal differentiable-computation core.
//!
//! A [`Graph`] records dense operations on row-major matrices and replays them
//! in reverse to obtain gradients. Every learned network in the crate
//! ([`crate::agent_model`], [`crate::rfm`], [`crate::policy`], the team
//! Q-networks) is built from the layers in [`layers`].

mod graph;
pub mod gradcheck;
pub mod layers;
pub mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::ParameterSet;
pub use tensor::{affine_forward, Tensor};

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> alloc::vec::Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: alloc::vec::Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(softmax(logits))`, computed without forming the probabilities first.
pub fn log_softmax(logits: &[f64]) -> alloc::vec::Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|l| libm::exp(l - max)).sum::<f64>());
    logits.iter().map(|l| l - lse).collect()
}
