//! Dense row-major tensors with a tape-based reverse-mode differentiation graph.
//!
//! A [`Tensor`] is an immutable value (shared through an `Arc`) optionally tagged
//! with the id of the [`Graph`] node that produced it. Operations are methods on
//! [`Graph`]; an op is recorded only when at least one input is attached, so
//! detached tensors never accumulate gradient.

mod check;
mod graph;
pub mod suite;

use std::sync::Arc;

pub use check::{gradient_check, GradCheckReport, ParamCheck};
pub use graph::{Graph, Gradients, NodeId};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeId>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![T::zero(); n]),
            node: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; n]),
            node: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    /// Row-major 2-D tensor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension of a 2-D tensor (1 for vectors).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing dimension of a 2-D tensor (length for vectors).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, no graph membership.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Value of a tensor whose shape product is 1.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Shape {
                op: "item",
                lhs: self.shape.clone(),
                rhs: vec![1],
            });
        }
        Ok(self.data[0])
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| arc.as_ref().clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::lit(v.as_f64())).collect()),
            node: None,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<T>>, node: Option<NodeId>) -> Self {
        Self { shape, data, node }
    }

    pub(crate) fn shared(&self) -> &Arc<Vec<T>> {
        &self.data
    }
}
