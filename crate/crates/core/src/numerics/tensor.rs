use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Dense row-major array of `f64`.
///
/// Rank-1 tensors of length `k` behave as `1 × k` matrices wherever a matrix
/// is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(config_err!(
                "tensor shape {:?} does not match {} elements",
                shape,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(x: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![x] }
    }

    /// # Panics
    /// If `rows * cols != data.len()`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols} from {} values", data.len());
        Self { shape: vec![rows, cols], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Number of columns when viewed as a matrix (trailing dims flattened).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn as_matrix(mut self) -> Self {
        if self.shape.len() != 2 {
            self.shape = vec![self.rows(), self.cols()];
        }
        self
    }

    pub(crate) fn reshaped(mut self, shape: &[usize]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// `out += a · b` for row-major `a: r×k`, `b: k×c`.
///
/// Four rows of `a` share each pass over a row of `b`. Every output entry
/// still accumulates its products in increasing `p`, so the result does not
/// depend on the blocking.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    let blocks = r / 4;
    for blk in 0..blocks {
        let i = blk * 4;
        let (o0, rest) = out[i * c..(i + 4) * c].split_at_mut(c);
        let (o1, rest) = rest.split_at_mut(c);
        let (o2, o3) = rest.split_at_mut(c);
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for p in 0..k {
            let b_row = &b[p * c..(p + 1) * c];
            let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
            for j in 0..c {
                let bv = b_row[j];
                o0[j] += x0 * bv;
                o1[j] += x1 * bv;
                o2[j] += x2 * bv;
                o3[j] += x3 * bv;
            }
        }
    }
    for i in blocks * 4..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: r×c`, `b: k×c`, giving `r×k`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], r: usize, c: usize, k: usize) {
    // transposing first turns the inner loop into a contiguous axpy
    let mut bt = vec![0.0; c * k];
    for p in 0..k {
        for q in 0..c {
            bt[q * k + p] = b[p * c + q];
        }
    }
    matmul_acc(a, &bt, out, r, c, k);
}

/// `out += aᵀ · d` for `a: r×k`, `d: r×c`, giving `k×c`.
pub(crate) fn matmul_at_acc(a: &[f64], d: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let a_row = &a[i * k..(i + 1) * k];
        let d_row = &d[i * c..(i + 1) * c];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * c..(p + 1) * c];
            for (o, &dv) in out_row.iter_mut().zip(d_row) {
                *o += aip * dv;
            }
        }
    }
}

/// Dense layer `input · weights + bias` for a single input vector.
pub fn affine_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let k = input.len();
    if weights.shape().len() != 2 || weights.shape()[0] != k || bias.len() != weights.shape()[1] {
        return Err(config_err!(
            "affine shapes do not conform: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        ));
    }
    let j = bias.len();
    let mut out = bias.data().to_vec();
    matmul_acc(input.data(), weights.data(), &mut out, 1, k, j);
    Ok(Tensor::vector(out))
}
