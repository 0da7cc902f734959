//! Dense tensors and the reverse-mode differentiation engine.
//!
//! [`Tensor`] is a plain value: a shape plus row-major data. Differentiation
//! happens on a [`Graph`], a tape that owns one node per operation result;
//! [`Var`] handles index into it. [`AdamState`] updates parameters held as
//! graph leaves.

mod adam;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use adam::AdamState;
pub use graph::{Graph, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array, row-major.
///
/// Invariant: `shape.iter().product() == data.len()`. Scalars use shape
/// `[1]`; zero extents are permitted (empty data) so that e.g. an exhausted
/// dataset split is representable, but every network operation rejects them.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Tensor<S> {
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: S) -> Tensor<S> {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: S) -> Tensor<S> {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Tensor<S>> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::contract(
                "Tensor::from_vec",
                format!(
                    "shape {:?} wants {} elements, got {}",
                    shape,
                    expect,
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Element of a rank-2 tensor; test and report helper, not a kernel.
    pub fn at2(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Lossless for f64->f64 and f32->f64; rounds for f64->f32.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
