//! Dense row-major f64 tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] owns parameter storage plus an accumulated gradient buffer.
//! Computation happens on a per-step tape ([`graph::Graph`]): leaves are
//! copied in, ops are recorded eagerly, and `backward` fills gradients that
//! callers pull back into `Tensor::grad`.

pub mod graph;
pub(crate) mod matmul;
pub mod mlp;
pub mod optim;
pub mod regularizer;

use crate::error::{Error, Result};

/// A 2-D row-major array with a gradient accumulator of the same shape.
/// Vectors are represented as single-row tensors.
#[derive(Debug, Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dim(format!(
                "tensor {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        let grad = vec![0.0; data.len()];
        Ok(Tensor { rows, cols, data, grad })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols], grad: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut() -> f64) -> Self {
        let data = (0..rows * cols).map(|_| f()).collect::<Vec<_>>();
        let grad = vec![0.0; rows * cols];
        Tensor { rows, cols, data, grad }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(matches!(Tensor::new(2, 3, vec![0.0; 5]), Err(Error::Dim(_))));
    }

    #[test]
    fn zero_grad_clears_accumulator() {
        let mut t = Tensor::zeros(2, 2);
        t.grad[3] = 4.5;
        t.zero_grad();
        assert!(t.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn from_fn_fills_row_major() {
        let mut n = 0.0;
        let t = Tensor::from_fn(2, 2, || {
            n += 1.0;
            n
        });
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
