use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{config_err, usage_err, Result};
use crate::rng::{self, Rng};

/// Named parameter tensors of one or more networks.
///
/// Names are dotted paths (`"rfm.edge.l0.w"`); the first segment names the
/// module, which is what per-module learning rates key on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSet {
    pub rng_seed: u64,
    tensors: BTreeMap<String, Tensor>,
    #[serde(skip)]
    init_rng: Option<Rng>,
}

impl PartialEq for ParameterSet {
    fn eq(&self, other: &Self) -> bool {
        self.rng_seed == other.rng_seed && self.tensors == other.tensors
    }
}

impl ParameterSet {
    pub fn new(rng_seed: u64) -> Self {
        Self { rng_seed, tensors: BTreeMap::new(), init_rng: Some(rng::from_seed(rng_seed)) }
    }

    /// Adds a tensor drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let n: usize = shape.iter().product();
        let seed = self.rng_seed;
        let rng = self.init_rng.get_or_insert_with(|| rng::from_seed(seed));
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.tensors.contains_key(name) {
            return Err(config_err!("duplicate parameter id {name}"));
        }
        self.tensors.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| usage_err!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| usage_err!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn set_all(&mut self, value: f64) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = value);
        }
    }

    /// Sets every tensor whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Moves every tensor of `other` into `self`.
    pub fn merge(&mut self, other: ParameterSet) -> Result<()> {
        for (name, t) in other.tensors {
            self.insert(&name, t)?;
        }
        Ok(())
    }

    /// FNV-1a over names and exact bit patterns; used to prove frozen-ness.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in &self.tensors {
            feed(name.as_bytes());
            for d in t.shape() {
                feed(&(*d as u64).to_le_bytes());
            }
            for x in t.data() {
                feed(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}
