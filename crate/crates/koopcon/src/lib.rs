//! Latent-space dataset condensation.
//!
//! The pipeline encodes a labeled image set into a low-dimensional latent
//! space with a convolutional autoencoder, condenses each class through a
//! shared self-attention block followed by a learned linear mixing map, and
//! decodes the condensed latents back into a small synthetic training set.
//! Condensation minimizes a weighted sum of four terms: reconstruction error,
//! classification cross-entropy, an entropic Wasserstein distance between the
//! real and condensed latent clouds, and a covariance-spread penalty.
//! A separate evaluation harness trains identical classifiers on the
//! condensed set and on a size-matched real subset and compares them on held
//! out test data.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! reverse-mode engine lives in [`tensor`], the transport solvers in
//! [`losses`], the model components in [`nn`], and the two pipeline stages in
//! [`condense`] and [`evalharness`].

pub mod condense;
pub mod config;
pub mod datasets;
pub mod error;
pub mod evalharness;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the two supported precisions.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
