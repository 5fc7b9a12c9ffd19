//! Dense row-major f32 tensors. Values are immutable after construction;
//! the payload sits behind an `Arc` so tensors clone cheaply and may be
//! shared across threads for reading.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, validating that every dimension is positive and the
    /// payload length matches the shape product.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Dim("tensor shape must have at least one dimension".into()));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dim(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {shape:?} implies {numel} elements but {} were provided",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data), requires_grad: false })
    }

    /// Panicking constructor for shapes known valid at the call site.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        Tensor::new(shape, data).expect("internal tensor construction")
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel])
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![v; numel])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..numel).map(|i| f(i)).collect())
    }

    /// Marks the tensor as a trainable parameter. Autodiff graphs consult
    /// this flag when the tensor is installed as a leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Replaces the payload, keeping shape and grad flag. Used by the
    /// optimizer, which conceptually rebinds a parameter to new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        if data.len() != self.numel() {
            return Err(Error::Dim(format!(
                "replacement payload has {} elements, tensor holds {}",
                data.len(),
                self.numel()
            )));
        }
        Ok(Tensor { shape: self.shape.clone(), data: Arc::new(data), requires_grad: self.requires_grad })
    }

    /// Elementwise map into a new tensor. This is a plain value operation
    /// with no gradient tracking; graphs have their own op set.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
            requires_grad: false,
        }
    }

    /// Bitwise payload equality; shape must match too. Distinct from any
    /// tolerance-based comparison, this is what checkpoint and determinism
    /// tests rely on.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
