//! Reverse-mode gradients against central finite differences.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Graph, ParameterSet, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Max relative error per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub network: String,
    pub trials: usize,
    pub max_rel_error: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.values().cloned().fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.trials += other.trials;
        for (k, v) in &other.max_rel_error {
            let e = self.max_rel_error.entry(k.clone()).or_insert(0.0);
            *e = e.max(*v);
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e−6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the gradient of `loss` with central differences for every entry
/// of every parameter whose name starts with one of `prefixes` (all when
/// empty).
pub fn check_loss<F>(params: &ParameterSet, prefixes: &[&str], loss: F) -> Result<BTreeMap<String, f64>>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, params)?;
    let analytic = g.backward(l)?.param_grads();

    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss(&mut g, p)?;
        Ok(g.scalar(l))
    };

    let mut out = BTreeMap::new();
    let mut probe = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
        .cloned()
        .collect();
    for name in names {
        let Some(grad) = analytic.get(&name) else { continue };
        let mut worst: f64 = 0.0;
        for i in 0..grad.len() {
            let orig = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
        out.insert(name, worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::{GruCell, Mlp};
    use alloc::vec;

    #[test]
    fn every_graph_op_passes_the_oracle() {
        let mlp = Mlp::new("m", 4, &[6], 5, false);
        let cell = GruCell::new("gru", 3, 4);
        let mut p = ParameterSet::new(17);
        mlp.init(&mut p).unwrap();
        cell.init(&mut p).unwrap();
        p.init_uniform("extra", &[2, 4], 2).unwrap();

        let report = check_loss(&p, &[], |g, p| {
            let x = g.matrix(2, 4, vec![0.1, -0.3, 0.5, 0.2, -0.8, 0.4, 0.0, 0.9]);
            let logits = mlp.forward(g, p, x)?;
            let lp = g.log_softmax_rows(logits);
            let picked = g.pick_cols(lp, &[1, 3])?;
            let e = g.exp(lp);
            let ent = g.mul(e, lp)?;
            let ent = g.row_sum(ent);
            let ratio = g.exp(picked);
            let clipped = g.clamp(ratio, 0.1, 0.3);
            let m = g.min(ratio, clipped)?;
            let s = g.sum(m);

            let extra = g.param(p, "extra")?;
            let h0 = g.slice_cols(extra, 0, 4)?;
            let inp = g.gather_rows(x, &[1, 0])?;
            let inp = g.slice_cols(inp, 1, 3)?;
            let h1 = cell.step(g, p, h0, inp)?;
            let seg = g.segment_sum(h1, &[1, 1], 3)?;
            let seg = g.reshape(seg, 4, 3)?;
            let sq = g.square(seg);
            let sq = g.mul_const(sq, vec![0.5; 12])?;
            let cat = g.concat_cols(&[ent, picked])?;
            let cat = g.concat_rows(&[cat, cat])?;
            let cat = g.reshape(cat, 2, 4)?;
            let cat = g.sigmoid(cat);
            let a = g.sum(sq);
            let b = g.sum(cat);
            let ab = g.add(a, b)?;
            let abs = g.sub(ab, s)?;
            Ok(g.mean(abs))
        })
        .unwrap();
        for (name, err) in &report {
            assert!(*err < 1e-6, "{name}: {err}");
        }
        assert!(report.len() >= 7);
    }
}
