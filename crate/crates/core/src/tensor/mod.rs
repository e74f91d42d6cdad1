//! Dense double-precision tensors with tape-based reverse-mode
//! automatic differentiation.
//!
//! The surface is intentionally small: exactly the operations needed to
//! express the NTM addressing pipeline, the LSTM baseline, and their
//! training losses. Every differentiable operation exists twice with a
//! shared numeric kernel: as a plain function over [`Tensor`] values
//! (inference path, see [`ops`]) and as a recorded operation on a
//! [`Tape`] (training path). Sharing the kernels keeps the two paths
//! bit-identical.

pub(crate) mod kernels;
pub mod ops;
mod tape;

pub use tape::{grad_check, grad_check_params, Gradients, Tape, ValueId};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from tensor operations with violated contracts.
#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("shape [{shape}] does not match data length {len}")]
    ShapeDataMismatch { shape: String, len: usize },
    #[error("circular_convolve: shift window length {len} must be odd")]
    EvenShiftWindow { len: usize },
    #[error("circular_convolve: shift window length {len} exceeds weighting length {n}")]
    ShiftWindowTooLarge { len: usize, n: usize },
    #[error("sharpen: weighting is all zero")]
    AllZeroWeights,
    #[error("{op}: expected a scalar, got {len} elements")]
    NotScalar { op: &'static str, len: usize },
}

/// Dense multi-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape: format!("{shape:?}"),
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix; panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut data = vec![0.0; n];
        data[index] = 1.0;
        Self::vector(data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on non-matrix tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on non-matrix tensor");
        self.shape[1]
    }

    pub fn at(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// True if nonnegative and summing to 1 within `tol`.
    pub fn is_distribution(&self, tol: f64) -> bool {
        self.data.iter().all(|&v| v >= 0.0) && (self.sum() - 1.0).abs() <= tol
    }
}
