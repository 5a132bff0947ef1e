//! Dense layer, MLP and gated recurrent cell on top of [`Graph`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Graph, ParameterSet, Var};
use crate::error::Result;

/// `x · W + b` with parameters `{name}.w` (`in × out`) and `{name}.b` (`out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self { name: String::from(name), in_dim, out_dim }
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        params.init_uniform(&format!("{}.w", self.name), &[self.in_dim, self.out_dim], self.in_dim)?;
        params.init_uniform(&format!("{}.b", self.name), &[self.out_dim], self.in_dim)
    }

    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let w = g.param(params, &format!("{}.w", self.name))?;
        let b = g.param(params, &format!("{}.b", self.name))?;
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Stack of [`Linear`] layers with `tanh` between them and an optional `tanh`
/// on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub tanh_output: bool,
}

impl Mlp {
    /// `hidden` lists the widths between input and output; empty means a
    /// single affine layer.
    pub fn new(name: &str, in_dim: usize, hidden: &[usize], out_dim: usize, tanh_output: bool) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.l{i}"), w[0], w[1]))
            .collect();
        Self { layers, tanh_output }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(params))
    }

    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, params, h)?;
            if i < last || self.tanh_output {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }
}

/// Gated recurrent cell.
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// The input weights of the three gates are stored side by side in
/// `{name}.wx` (`in × 3d`), the state weights of the two gates in `{name}.uzr`
/// (`d × 2d`), the candidate's state weights in `{name}.uh`, biases in
/// `{name}.b` (`3d`). A state inside `(−1, 1)` stays inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub name: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(name: &str, input_dim: usize, hidden_dim: usize) -> Self {
        Self { name: String::from(name), input_dim, hidden_dim }
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        let (i, d) = (self.input_dim, self.hidden_dim);
        let fan_in = i + d;
        params.init_uniform(&format!("{}.wx", self.name), &[i, 3 * d], fan_in)?;
        params.init_uniform(&format!("{}.uzr", self.name), &[d, 2 * d], fan_in)?;
        params.init_uniform(&format!("{}.uh", self.name), &[d, d], fan_in)?;
        params.init_uniform(&format!("{}.b", self.name), &[3 * d], fan_in)
    }

    /// One step for a batch: `state: B × d`, `input: B × in`.
    pub fn step(&self, g: &mut Graph, params: &ParameterSet, state: Var, input: Var) -> Result<Var> {
        let d = self.hidden_dim;
        let wx = g.param(params, &format!("{}.wx", self.name))?;
        let uzr = g.param(params, &format!("{}.uzr", self.name))?;
        let uh = g.param(params, &format!("{}.uh", self.name))?;
        let b = g.param(params, &format!("{}.b", self.name))?;

        let xw = g.matmul(input, wx)?;
        let xw = g.add_row(xw, b)?;
        let hu = g.matmul(state, uzr)?;

        let x_zr = g.slice_cols(xw, 0, 2 * d)?;
        let pre_zr = g.add(x_zr, hu)?;
        let zr = g.sigmoid(pre_zr);
        let z = g.slice_cols(zr, 0, d)?;
        let r = g.slice_cols(zr, d, d)?;

        let rh = g.mul(r, state)?;
        let rhu = g.matmul(rh, uh)?;
        let x_h = g.slice_cols(xw, 2 * d, d)?;
        let pre_h = g.add(x_h, rhu)?;
        let candidate = g.tanh(pre_h);

        let keep = g.affine(z, -1.0, 1.0);
        let kept = g.mul(keep, state)?;
        let new = g.mul(z, candidate)?;
        g.add(kept, new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    fn cell_params(seed: u64, zero: bool) -> (GruCell, ParameterSet) {
        let cell = GruCell::new("gru", 4, 6);
        let mut p = ParameterSet::new(seed);
        cell.init(&mut p).unwrap();
        if zero {
            p.set_all(0.0);
        }
        (cell, p)
    }

    fn run_step(cell: &GruCell, p: &ParameterSet, state: &[f64], input: &[f64]) -> Vec<f64> {
        let mut g = Graph::inference();
        let s = g.row(state.to_vec());
        let x = g.row(input.to_vec());
        let out = cell.step(&mut g, p, s, x).unwrap();
        g.value(out).data().to_vec()
    }

    #[test]
    fn zero_everything_is_a_fixed_point() {
        let (cell, p) = cell_params(1, true);
        let out = run_step(&cell, &p, &[0.0; 6], &[0.0; 4]);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn repeated_input_converges() {
        let (cell, p) = cell_params(5, false);
        let input = [0.3, -0.7, 0.1, 0.9];
        let mut state = vec![0.0; 6];
        let mut converged = false;
        for _ in 0..10_000 {
            let next = run_step(&cell, &p, &state, &input);
            let delta: f64 = next.iter().zip(&state).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            state = next;
            if delta < 1e-6 {
                converged = true;
                break;
            }
        }
        assert!(converged);
    }

    #[test]
    fn state_stays_inside_unit_interval() {
        let (cell, p) = cell_params(9, false);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut state = vec![0.0; 6];
        for _ in 0..200 {
            let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-20.0..20.0)).collect();
            state = run_step(&cell, &p, &state, &input);
            assert!(state.iter().all(|x| *x > -1.0 && *x < 1.0));
        }
    }

    #[test]
    fn mlp_zero_params_zero_output() {
        let mlp = Mlp::new("m", 3, &[5], 2, false);
        let mut p = ParameterSet::new(0);
        mlp.init(&mut p).unwrap();
        p.set_all(0.0);
        let mut g = Graph::inference();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = mlp.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }
}
