//! Primitive parameterized layers: dense, convolution, transposed
//! convolution. Weights are He-uniform initialized (`U(-l, l)` with
//! `l = sqrt(6 / fan_in)`), biases start at zero.

use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

fn he_uniform<S: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| S::from_f64(rng.range(-limit, limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Fully connected layer: `x [n x in] -> x W + b [n x out]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: Var,
    pub b: Var,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn init<S: Scalar>(g: &mut Graph<S>, rng: &mut Rng, in_dim: usize, out_dim: usize) -> Dense {
        let w = g.leaf(he_uniform(rng, &[in_dim, out_dim], in_dim), true);
        let b = g.leaf(Tensor::zeros(&[out_dim]), true);
        Dense {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.w)?;
        g.add_row_bias(xw, self.b)
    }

    pub fn params(&self) -> [Var; 2] {
        [self.w, self.b]
    }
}

/// 2-D convolution with per-output-channel bias. Kernel `[cout x cin x kh x kw]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub k: Var,
    pub b: Var,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn init<S: Scalar>(
        g: &mut Graph<S>,
        rng: &mut Rng,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Conv {
        let k = g.leaf(
            he_uniform(rng, &[cout, cin, kernel, kernel], cin * kernel * kernel),
            true,
        );
        let b = g.leaf(Tensor::zeros(&[cout]), true);
        Conv {
            k,
            b,
            cin,
            cout,
            stride,
            pad,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let y = g.conv2d(x, self.k, self.stride, self.pad)?;
        g.add_chan_bias(y, self.b)
    }

    pub fn params(&self) -> [Var; 2] {
        [self.k, self.b]
    }
}

/// Transposed 2-D convolution (exact adjoint geometry of [`Conv`]).
/// Kernel `[cin x cout x kh x kw]`; `kh`/`kw` may differ to hit odd targets.
#[derive(Clone, Copy, Debug)]
pub struct ConvT {
    pub k: Var,
    pub b: Var,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvT {
    #[allow(clippy::too_many_arguments)]
    pub fn init<S: Scalar>(
        g: &mut Graph<S>,
        rng: &mut Rng,
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> ConvT {
        let k = g.leaf(he_uniform(rng, &[cin, cout, kh, kw], cin * kh * kw), true);
        let b = g.leaf(Tensor::zeros(&[cout]), true);
        ConvT {
            k,
            b,
            cin,
            cout,
            stride,
            pad,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let y = g.conv_t2d(x, self.k, self.stride, self.pad)?;
        g.add_chan_bias(y, self.b)
    }

    pub fn params(&self) -> [Var; 2] {
        [self.k, self.b]
    }
}
