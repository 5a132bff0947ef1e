use alloc::collections::BTreeMap;
use alloc::string::String;
use serde::{Deserialize, Serialize};

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Adam with per-module learning rates.
///
/// A parameter's module is the part of its name before the first `.`.
/// Modules missing from `module_lr` use `default_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub default_lr: f64,
    pub module_lr: BTreeMap<String, f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(default_lr: f64) -> Self {
        Self {
            default_lr,
            module_lr: BTreeMap::new(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn with_module_lr(mut self, module: &str, lr: f64) -> Self {
        self.module_lr.insert(String::from(module), lr);
        self
    }

    pub fn lr_for(&self, name: &str) -> f64 {
        let module = name.split('.').next().unwrap_or(name);
        self.module_lr.get(module).copied().unwrap_or(self.default_lr)
    }

    /// Applies one update. Gradients for names absent from `params` are an error.
    pub fn apply(&mut self, params: &mut ParameterSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (name, g) in grads {
            let lr = self.lr_for(name);
            let p = params.get_mut(name)?;
            if p.len() != g.len() {
                return Err(Error::Usage(alloc::format!("gradient shape mismatch for {name}")));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            if lr == 0.0 {
                continue;
            }
            for (((pi, gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient map.
pub fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    libm::sqrt(grads.values().map(Tensor::sum_squares).sum())
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
