//! Plain (non-recorded) tensor operations.
//!
//! These validate their contracts and return descriptive errors. The
//! tape in [`super::tape`] records the same kernels for training.

use super::kernels;
use super::{Tensor, TensorError};

pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape().len() != 2 || x.shape().len() != 1 || a.cols() != x.len() {
        return Err(TensorError::ShapeMismatch {
            op: "matvec",
            expected: "[m×n] · [n]".into(),
            got: format!("{:?} · {:?}", a.shape(), x.shape()),
        });
    }
    let mut out = vec![0.0; a.rows()];
    kernels::matvec(a.rows(), a.cols(), a.data(), x.data(), &mut out);
    Ok(Tensor::vector(out))
}

pub fn softmax(x: &Tensor) -> Result<Tensor, TensorError> {
    if x.is_empty() {
        return Err(TensorError::EmptyInput { op: "softmax" });
    }
    let mut out = vec![0.0; x.len()];
    kernels::softmax(x.data(), &mut out);
    Ok(Tensor::vector(out))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, kernels::sigmoid)
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, kernels::relu)
}

pub fn hard_sigmoid(x: &Tensor) -> Tensor {
    map(x, kernels::hard_sigmoid)
}

pub fn softplus(x: &Tensor) -> Tensor {
    map(x, kernels::softplus)
}

pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64, TensorError> {
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            expected: format!("two vectors of length {}", a.len()),
            got: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(kernels::cosine_similarity(a.data(), b.data()))
}

/// Circular convolution of a weighting with a centered shift
/// distribution over offsets {−(k−1)/2, …, +(k−1)/2}.
pub fn circular_convolve(w: &Tensor, s: &Tensor) -> Result<Tensor, TensorError> {
    if s.len() % 2 == 0 {
        return Err(TensorError::EvenShiftWindow { len: s.len() });
    }
    if s.len() > w.len() {
        return Err(TensorError::ShiftWindowTooLarge {
            len: s.len(),
            n: w.len(),
        });
    }
    let mut out = vec![0.0; w.len()];
    kernels::circular_convolve(w.data(), s.data(), &mut out);
    Ok(Tensor::vector(out))
}

/// w(i)^γ / Σ_j w(j)^γ. γ = 1 returns the input unchanged.
pub fn sharpen(w: &Tensor, gamma: f64) -> Result<Tensor, TensorError> {
    debug_assert!(gamma >= 1.0, "sharpen expects γ ≥ 1, got {gamma}");
    if w.data().iter().all(|&v| v == 0.0) {
        return Err(TensorError::AllZeroWeights);
    }
    let mut out = vec![0.0; w.len()];
    kernels::sharpen(w.data(), gamma, &mut out);
    Ok(Tensor::vector(out))
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|&v| f(v)).collect(),
    )
    .expect("shape preserved")
}
