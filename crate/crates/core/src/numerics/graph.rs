use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{ParameterSet, Tensor};
use crate::error::{config_err, usage_err, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    Reshape(Var),
    LogSoftmaxRows(Var),
    PickCols(Var, Vec<usize>),
    RowSum(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape over row-major matrices.
///
/// Values are computed eagerly when an operation is recorded. Parameters
/// bound with [`Graph::param`] are the only leaves that receive gradients;
/// constants (including detached copies) never do.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, (Var, Vec<usize>)>,
    track: bool,
}

/// Gradients of a scalar with respect to every node of a [`Graph`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, (Var, Vec<usize>)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every bound parameter, shaped like the parameter. Parameters
    /// the loss does not depend on get zeros.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, (var, shape))| {
                let g = match &self.grads[var.0] {
                    Some(g) => g.clone().reshaped(shape),
                    None => Tensor::zeros(shape),
                };
                (name.clone(), g)
            })
            .collect()
    }
}

impl Graph {
    /// A graph that records operations for backpropagation.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new(), track: true }
    }

    /// A graph for inference only: parameters are bound as constants.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new(), track: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.track });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Records a constant. Rank-1 inputs become `1 × k` rows.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.as_matrix(), Op::Leaf, false)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.constant(Tensor::matrix(rows, cols, data))
    }

    pub fn row(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.constant(Tensor::matrix(1, n, data))
    }

    /// Binds parameter `name`; repeated calls return the same variable.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        if let Some((v, _)) = self.params.get(name) {
            return Ok(*v);
        }
        let t = params.get(name)?;
        let shape = t.shape().to_vec();
        let v = self.push(t.clone().as_matrix(), Op::Leaf, true);
        self.params.insert(String::from(name), (v, shape));
        Ok(v)
    }

    /// Stop-gradient copy.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims(a);
        let (k2, c) = self.dims(b);
        if k != k2 {
            return Err(config_err!("matmul {r}x{k} by {k2}x{c}"));
        }
        let mut out = vec![0.0; r * c];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(r, c, out), Op::MatMul(a, b), ng))
    }

    /// `a + b` with the single row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(b);
        if br != 1 || bc != c {
            return Err(config_err!("row broadcast {br}x{bc} onto {r}x{c}"));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(r, c, out), Op::AddRow(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if (ar, ac) != (br, bc) {
            return Err(config_err!("{what} of {ar}x{ac} and {br}x{bc}"));
        }
        let out: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((Tensor::matrix(ar, ac, out), self.ng(a) || self.ng(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.zip_same(a, b, "min", |x, y| if y < x { y } else { x })?;
        Ok(self.push(t, Op::Min(a, b), ng))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        let (r, k) = self.dims(a);
        if c.len() != r * k {
            return Err(config_err!("mul_const of {r}x{k} by {} values", c.len()));
        }
        let out: Vec<f64> = self.value(a).data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, k, out), Op::MulConst(a, c), ng))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|x| scale * x + shift).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, out), Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, out), op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + libm::exp(-x))
            } else {
                let e = libm::exp(x);
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), libm::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Horizontal concatenation; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.dims(p).0,
            None => return Err(config_err!("concat of nothing")),
        };
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(config_err!("concat of {r} rows onto {rows} rows"));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical stacking; all parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.dims(p).1,
            None => return Err(config_err!("concat of nothing")),
        };
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(config_err!("stacking {c} columns onto {cols} columns"));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(config_err!("slice {start}..{} of {c} columns", start + len));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, len, out), Op::SliceCols(a, start), ng))
    }

    /// Output row `i` is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(usage_err!("gather row {i} of {r}"));
            }
            out.extend_from_slice(self.value(a).row(i));
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(index.len(), c, out), Op::GatherRows(a, index.to_vec()), ng))
    }

    /// Output row `s` is the sum of the rows `i` of `a` with `segment[i] == s`;
    /// segments with no rows are zero.
    pub fn segment_sum(&mut self, a: Var, segment: &[usize], n_segments: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if segment.len() != r {
            return Err(usage_err!("{} segment ids for {r} rows", segment.len()));
        }
        let mut out = vec![0.0; n_segments * c];
        for (i, &s) in segment.iter().enumerate() {
            if s >= n_segments {
                return Err(usage_err!("segment {s} of {n_segments}"));
            }
            for (o, x) in out[s * c..(s + 1) * c].iter_mut().zip(self.value(a).row(i)) {
                *o += x;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(n_segments, c, out), Op::SegmentSum(a, segment.to_vec()), ng))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r * c != rows * cols {
            return Err(config_err!("reshape {r}x{c} to {rows}x{cols}"));
        }
        let data = self.value(a).data().to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::Reshape(a), ng))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(super::log_softmax(self.value(a).row(i)));
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, out), Op::LogSoftmaxRows(a), ng)
    }

    /// Column `index[i]` of row `i`, as an `r × 1` column.
    pub fn pick_cols(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if index.len() != r {
            return Err(usage_err!("{} picks for {r} rows", index.len()));
        }
        let mut out = Vec::with_capacity(r);
        for (i, &j) in index.iter().enumerate() {
            if j >= c {
                return Err(usage_err!("column {j} out of range for {c} columns"));
            }
            out.push(self.value(a).row(i)[j]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, 1, out), Op::PickCols(a, index.to_vec()), ng))
    }

    /// Per-row sums as an `r × 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, _) = self.dims(a);
        let out = (0..r).map(|i| self.value(a).row(i).iter().sum()).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, 1, out), Op::RowSum(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.track {
            return Err(usage_err!("backward on an inference graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(usage_err!("loss must be scalar, got shape {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.dims(*a);
                let c = out.cols();
                if self.ng(*a) {
                    let dst = self.grad_buf(grads, *a);
                    matmul_bt_acc(gd, self.value(*b).data(), dst, r, c, k);
                }
                if self.ng(*b) {
                    let dst = self.grad_buf(grads, *b);
                    matmul_at_acc(self.value(*a).data(), gd, dst, r, k, c);
                }
            }
            Op::AddRow(a, b) => {
                if self.ng(*a) {
                    acc(self.grad_buf(grads, *a), gd, 1.0);
                }
                if self.ng(*b) {
                    let c = out.cols();
                    let dst = self.grad_buf(grads, *b);
                    for row in gd.chunks(c.max(1)) {
                        acc(dst, row, 1.0);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    acc(self.grad_buf(grads, *a), gd, 1.0);
                }
                if self.ng(*b) {
                    acc(self.grad_buf(grads, *b), gd, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    acc(self.grad_buf(grads, *a), gd, 1.0);
                }
                if self.ng(*b) {
                    acc(self.grad_buf(grads, *b), gd, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b).data();
                    let dst = self.grad_buf(grads, *a);
                    for ((d, x), y) in dst.iter_mut().zip(gd).zip(bv) {
                        *d += x * y;
                    }
                }
                if self.ng(*b) {
                    let av = self.value(*a).data();
                    let dst = self.grad_buf(grads, *b);
                    for ((d, x), y) in dst.iter_mut().zip(gd).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::MulConst(a, c) => {
                let dst = self.grad_buf(grads, *a);
                for ((d, x), y) in dst.iter_mut().zip(gd).zip(c) {
                    *d += x * y;
                }
            }
            Op::Affine(a, s) => acc(self.grad_buf(grads, *a), gd, *s),
            Op::Tanh(a) => {
                let dst = self.grad_buf(grads, *a);
                for ((d, x), y) in dst.iter_mut().zip(gd).zip(out.data()) {
                    *d += x * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let dst = self.grad_buf(grads, *a);
                for ((d, x), y) in dst.iter_mut().zip(gd).zip(out.data()) {
                    *d += x * y * (1.0 - y);
                }
            }
            Op::Exp(a) => {
                let dst = self.grad_buf(grads, *a);
                for ((d, x), y) in dst.iter_mut().zip(gd).zip(out.data()) {
                    *d += x * y;
                }
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                let dst = self.grad_buf(grads, *a);
                for ((d, x), y) in dst.iter_mut().zip(gd).zip(av) {
                    *d += 2.0 * x * y;
                }
            }
            Op::Min(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // ties route to `a`
                if self.ng(*a) {
                    let dst = self.grad_buf(grads, *a);
                    for i in 0..dst.len() {
                        if av[i] <= bv[i] {
                            dst[i] += gd[i];
                        }
                    }
                }
                if self.ng(*b) {
                    let dst = self.grad_buf(grads, *b);
                    for i in 0..dst.len() {
                        if bv[i] < av[i] {
                            dst[i] += gd[i];
                        }
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                let dst = self.grad_buf(grads, *a);
                for i in 0..dst.len() {
                    if av[i] > *lo && av[i] < *hi {
                        dst[i] += gd[i];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.ng(p) {
                        let dst = self.grad_buf(grads, p);
                        for i in 0..rows {
                            acc(&mut dst[i * c..(i + 1) * c], &gd[i * total + offset..i * total + offset + c], 1.0);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.ng(p) {
                        acc(self.grad_buf(grads, p), &gd[offset..offset + n], 1.0);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.dims(*a);
                let len = out.cols();
                let dst = self.grad_buf(grads, *a);
                for i in 0..r {
                    acc(&mut dst[i * c + start..i * c + start + len], &gd[i * len..(i + 1) * len], 1.0);
                }
            }
            Op::GatherRows(a, index) => {
                let c = out.cols();
                let dst = self.grad_buf(grads, *a);
                for (i, &src) in index.iter().enumerate() {
                    acc(&mut dst[src * c..(src + 1) * c], &gd[i * c..(i + 1) * c], 1.0);
                }
            }
            Op::SegmentSum(a, segment) => {
                let c = out.cols();
                let dst = self.grad_buf(grads, *a);
                for (i, &s) in segment.iter().enumerate() {
                    acc(&mut dst[i * c..(i + 1) * c], &gd[s * c..(s + 1) * c], 1.0);
                }
            }
            Op::Reshape(a) => acc(self.grad_buf(grads, *a), gd, 1.0),
            Op::LogSoftmaxRows(a) => {
                let c = out.cols();
                let dst = self.grad_buf(grads, *a);
                for i in 0..out.rows() {
                    let g_row = &gd[i * c..(i + 1) * c];
                    let y_row = out.row(i);
                    let gsum: f64 = g_row.iter().sum();
                    for j in 0..c {
                        dst[i * c + j] += g_row[j] - libm::exp(y_row[j]) * gsum;
                    }
                }
            }
            Op::PickCols(a, index) => {
                let c = self.dims(*a).1;
                let dst = self.grad_buf(grads, *a);
                for (i, &j) in index.iter().enumerate() {
                    dst[i * c + j] += gd[i];
                }
            }
            Op::RowSum(a) => {
                let c = self.dims(*a).1;
                let dst = self.grad_buf(grads, *a);
                for (i, gi) in gd.iter().enumerate() {
                    for d in &mut dst[i * c..(i + 1) * c] {
                        *d += gi;
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                for d in self.grad_buf(grads, *a).iter_mut() {
                    *d += g0;
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
        let (r, c) = self.dims(v);
        grads[v.0].get_or_insert_with(|| Tensor::zeros(&[r, c])).data_mut()
    }
}

fn acc(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::vector(vec![1.0, -2.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap().param_grads();
        assert_eq!(grads["x"].data(), &[2.0, -4.0]);
        assert_eq!(grads["x"].shape(), &[2]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::vector(vec![1.0, 3.0])).unwrap();
        p.insert("y", Tensor::vector(vec![5.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let _y = g.param(&p, "y").unwrap();
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap().param_grads();
        assert_eq!(grads["y"].data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::vector(vec![1.0, 3.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        assert!(matches!(g.backward(x), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::vector(vec![2.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let d = g.detach(x);
        let prod = g.mul(x, d).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap().param_grads();
        // d(x * stop(x))/dx = stop(x) = 2, not 2x = 4
        assert_eq!(grads["x"].data(), &[2.0]);
    }

    #[test]
    fn segment_sum_leaves_empty_segments_zero() {
        let mut g = Graph::new();
        let a = g.matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = g.segment_sum(a, &[0, 2, 0], 4).unwrap();
        assert_eq!(g.value(s).data(), &[6.0, 8.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
    }
}
