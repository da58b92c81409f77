//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value type (row-major `f64` buffer plus shape).
//! Differentiable computation happens on a [`Graph`]: every operation
//! appends a node, and [`Graph::backward`] walks the records in exact
//! reverse order, accumulating gradients with `+=`. Graphs are rebuilt
//! per forward pass (define-by-run), which keeps backpropagation through
//! unrolled recurrences straightforward.

mod gradcheck;
mod graph;

pub use gradcheck::{gradcheck, gradcheck_multi};
pub use graph::{Graph, Var};

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats in row-major order.
///
/// A scalar is represented with shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element at a multi-dimensional index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (d, &i) in index.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            flat = flat * self.shape[d] + i;
        }
        flat
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Broadcast-compatible result shape, numpy-style (right-aligned, size-1
/// dimensions expand).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for (i, slot) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, ndim, i);
        let db = dim_from_right(b, ndim, i);
        if da != db && da != 1 && db != 1 {
            return Err(Error::dim(format!(
                "shapes {a:?} and {b:?} are not broadcastable"
            )));
        }
        *slot = da.max(db);
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], ndim: usize, i: usize) -> usize {
    let pad = ndim - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// Expand `t` to `out_shape` (already validated as broadcast-compatible),
/// returning the expanded data buffer.
pub(crate) fn broadcast_to(t: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    if t.shape() == out_shape {
        return t.data.clone();
    }
    let ndim = out_shape.len();
    let padded: Vec<usize> = (0..ndim).map(|i| dim_from_right(&t.shape, ndim, i)).collect();
    let numel: usize = out_shape.iter().product();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; ndim];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..ndim).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        for d in 0..ndim {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            src = src * padded[d] + c;
        }
        *slot = t.data[src];
    }
    out
}

/// Sum `grad` (shaped `grad_shape`) down to `target_shape`, collapsing the
/// dimensions that were expanded by broadcasting.
pub(crate) fn reduce_grad_to_shape(
    grad: &[f64],
    grad_shape: &[usize],
    target_shape: &[usize],
) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let ndim = grad_shape.len();
    let padded: Vec<usize> = (0..ndim)
        .map(|i| dim_from_right(target_shape, ndim, i))
        .collect();
    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; ndim];
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        for d in (0..ndim).rev() {
            coords[d] = rem % grad_shape[d];
            rem /= grad_shape[d];
        }
        let mut dst = 0;
        for d in 0..ndim {
            let c = if padded[d] == 1 { 0 } else { coords[d] };
            dst = dst * padded[d] + c;
        }
        out[dst] += g;
    }
    out
}
