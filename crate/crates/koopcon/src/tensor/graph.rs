//! Reverse-mode differentiation on a tape.
//!
//! A [`Graph`] owns one node per operation result in creation order, so the
//! tape itself is a topological order: the backward sweep simply walks node
//! indices from the root down to zero. Gradients accumulate (add, never
//! overwrite); [`Graph::zero_grads`] clears them explicitly, and
//! [`Graph::truncate`] pops transient forward nodes while keeping persistent
//! leaves (parameters) alive across steps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tensor};

/// Handle to a graph node. A plain index: cheap to copy, invalidated only by
/// [`Graph::truncate`] when it points past the new length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    /// [n x p] + [p], broadcast over rows.
    AddRowBias(Var, Var),
    /// [n x c x h x w] + [c], broadcast over samples and pixels.
    AddChanBias(Var, Var),
    Matmul(Var, Var),
    /// a [m x k] * b[p x k]^T; avoids materializing transposes in attention.
    MatmulNT(Var, Var),
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    /// Transposed convolution, kernel layout [cin x cout x kh x kw]; the
    /// exact adjoint of `Conv2d` with the same kernel, stride and padding.
    ConvT2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    AvgPool2(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Concat0(Var, Var),
    /// Mean squared error between two same-shape tensors.
    Mse(Var, Var),
    /// Mean negative log-likelihood of `labels` under softmax(logits).
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    /// sum_ij plan[i,j] * ||y_i - yp_j||^2 with `plan` held constant: the
    /// envelope gradient of the entropic transport objective.
    WeightedSqdist {
        y: Var,
        yp: Var,
        plan: Vec<S>,
    },
    /// ||Cov(yp) - I||_F^2 over rows of yp.
    CovLoss(Var),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Graph<S> {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes at index `len` and beyond. Used between optimizer steps
    /// to discard the forward tape while keeping parameter leaves.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, v: Var) -> S {
        debug_assert_eq!(self.nodes[v.0].value.numel(), 1);
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Overwrite a leaf's value in place; shape must match. Used when loading
    /// checkpoints into an already-built model.
    pub fn set_value(&mut self, v: Var, t: Tensor<S>) -> Result<()> {
        let cur = &self.nodes[v.0].value;
        if cur.shape() != t.shape() {
            return Err(Error::shape("set_value", cur.shape(), t.shape()));
        }
        self.nodes[v.0].value = t;
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self, v: Var) -> (&mut [S], Option<&[S]>) {
        let node = &mut self.nodes[v.0];
        (node.value.data_mut(), node.grad.as_deref())
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise and broadcast ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let t = Tensor::from_vec(self.shape(a), data).expect("add shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("sub", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let t = Tensor::from_vec(self.shape(a), data).expect("sub shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let t = Tensor::from_vec(self.shape(a), data).expect("mul shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        let data: Vec<S> = self.data(x).iter().map(|&v| v * s).collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("scale shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::Scale(x, s))
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::shape("add_row_bias", xs, bs));
        }
        let (n, p) = (xs[0], xs[1]);
        let xd = self.data(x);
        let bd = self.data(b);
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                data.push(xd[i * p + j] + bd[j]);
            }
        }
        let t = Tensor::from_vec(&[n, p], data).expect("add_row_bias shape");
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, rg, Op::AddRowBias(x, b)))
    }

    pub fn add_chan_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if xs.len() != 4 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::shape("add_chan_bias", &xs, &bs));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xd = self.data(x);
        let bd = self.data(b);
        let mut data = Vec::with_capacity(xd.len());
        for s in 0..n {
            for ci in 0..c {
                let bias = bd[ci];
                let base = (s * c + ci) * hw;
                for t in 0..hw {
                    data.push(xd[base + t] + bias);
                }
            }
        }
        let t = Tensor::from_vec(&xs, data).expect("add_chan_bias shape");
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, rg, Op::AddChanBias(x, b)))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * p];
        kernels::mm_nn(self.data(a), self.data(b), m, k, p, &mut out);
        let t = Tensor::from_vec(&[m, p], out).expect("matmul shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Matmul(a, b)))
    }

    /// a [m x k] times b[p x k] transposed -> [m x p].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_nt", sa, sb));
        }
        let (m, k, p) = (sa[0], sa[1], sb[0]);
        let mut out = vec![S::zero(); m * p];
        kernels::mm_nt(self.data(a), self.data(b), m, k, p, &mut out);
        let t = Tensor::from_vec(&[m, p], out).expect("matmul_nt shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::MatmulNT(a, b)))
    }

    // ---- convolutions and pooling ----

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d", "stride must be >= 1"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, kh, kw) = (ks[0], ks[2], ks[3]);
        let (ho, wo) = match (
            kernels::conv_out_dim(h, kh, stride, pad),
            kernels::conv_out_dim(w, kw, stride, pad),
        ) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => return Err(Error::shape("conv2d: kernel exceeds padded input", &xs, &ks)),
        };
        let (ckk, l) = (c * kh * kw, ho * wo);
        let mut cols = vec![S::zero(); ckk * l];
        let mut out = vec![S::zero(); n * f * l];
        for s in 0..n {
            kernels::im2col(
                &self.data(x)[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                kh,
                kw,
                stride,
                pad,
                &mut cols,
            );
            kernels::mm_nn(
                self.data(k),
                &cols,
                f,
                ckk,
                l,
                &mut out[s * f * l..(s + 1) * f * l],
            );
        }
        let t = Tensor::from_vec(&[n, f, ho, wo], out).expect("conv2d shape");
        let rg = self.rg(x) || self.rg(k);
        Ok(self.push(t, rg, Op::Conv2d { x, k, stride, pad }))
    }

    pub fn conv_t2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[0] {
            return Err(Error::shape("conv_t2d", &xs, &ks));
        }
        if stride == 0 {
            return Err(Error::contract("conv_t2d", "stride must be >= 1"));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ks[1], ks[2], ks[3]);
        let ho = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let wo = ((w - 1) * stride + kw).checked_sub(2 * pad);
        let (ho, wo) = match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
            _ => return Err(Error::shape("conv_t2d: empty output", &xs, &ks)),
        };
        let (ckk, hw) = (cout * kh * kw, h * w);
        let mut cols = vec![S::zero(); ckk * hw];
        let mut out = vec![S::zero(); n * cout * ho * wo];
        for s in 0..n {
            cols.fill(S::zero());
            // cols = K^T x_s, then scatter into the (larger) output plane:
            // exactly the input-gradient path of the matching forward conv.
            kernels::mm_tn(
                self.data(k),
                &self.data(x)[s * cin * hw..(s + 1) * cin * hw],
                ckk,
                cin,
                hw,
                &mut cols,
            );
            kernels::col2im(
                &cols,
                cout,
                ho,
                wo,
                kh,
                kw,
                stride,
                pad,
                &mut out[s * cout * ho * wo..(s + 1) * cout * ho * wo],
            );
        }
        let t = Tensor::from_vec(&[n, cout, ho, wo], out).expect("conv_t2d shape");
        let rg = self.rg(x) || self.rg(k);
        Ok(self.push(t, rg, Op::ConvT2d { x, k, stride, pad }))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("avg_pool2", &xs, &[0; 4]));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h < 2 || w < 2 {
            return Err(Error::contract(
                "avg_pool2",
                format!("spatial extent {h}x{w} too small to pool"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![S::zero(); n * c * ho * wo];
        kernels::avgpool2_forward(self.data(x), n * c, h, w, &mut out);
        let t = Tensor::from_vec(&[n, c, ho, wo], out).expect("avg_pool2 shape");
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::AvgPool2(x)))
    }

    // ---- nonlinearities ----

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<S> = self
            .data(x)
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("relu shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data: Vec<S> = self.data(x).iter().map(|&v| stable_sigmoid(v)).collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("sigmoid shape");
        let rg = self.rg(x);
        self.push(t, rg, Op::Sigmoid(x))
    }

    /// Softmax along `axis`, max-subtracted for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::contract(
                "softmax",
                format!("axis {axis} out of range for shape {xs:?}"),
            ));
        }
        let (outer, m, inner) = lane_dims(&xs, axis);
        let xd = self.data(x);
        let mut out = vec![S::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * m * inner + j * inner + i;
                let mut mx = xd[at(0)];
                for j in 1..m {
                    if xd[at(j)] > mx {
                        mx = xd[at(j)];
                    }
                }
                let mut denom = S::zero();
                for j in 0..m {
                    let e = (xd[at(j)] - mx).exp();
                    out[at(j)] = e;
                    denom += e;
                }
                for j in 0..m {
                    out[at(j)] = out[at(j)] / denom;
                }
            }
        }
        let t = Tensor::from_vec(&xs, out).expect("softmax shape");
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Softmax { x, axis }))
    }

    // ---- shape ops and reductions ----

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let want: usize = new_shape.iter().product();
        if want != self.nodes[x.0].value.numel() {
            return Err(Error::shape("reshape", self.shape(x), new_shape));
        }
        let t = Tensor::from_vec(new_shape, self.data(x).to_vec()).expect("reshape shape");
        let rg = self.rg(x);
        Ok(self.push(t, rg, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = S::zero();
        for &v in self.data(x) {
            s += v;
        }
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel();
        let mut s = S::zero();
        for &v in self.data(x) {
            s += v;
        }
        let rg = self.rg(x);
        self.push(
            Tensor::scalar(s / S::from_f64(n as f64)),
            rg,
            Op::Mean(x),
        )
    }

    /// Concatenate along axis 0; trailing dimensions must agree.
    pub fn concat0(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.len() < 1 || sa[1..] != sb[1..] {
            return Err(Error::shape("concat0", &sa, &sb));
        }
        let mut shape = sa.clone();
        shape[0] = sa[0] + sb[0];
        let mut data = Vec::with_capacity(self.data(a).len() + self.data(b).len());
        data.extend_from_slice(self.data(a));
        data.extend_from_slice(self.data(b));
        let t = Tensor::from_vec(&shape, data).expect("concat0 shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, Op::Concat0(a, b)))
    }

    // ---- fused loss heads ----

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mse", self.shape(a), self.shape(b)));
        }
        let n = self.nodes[a.0].value.numel();
        let mut s = S::zero();
        for (&x, &y) in self.data(a).iter().zip(self.data(b)) {
            let d = x - y;
            s += d * d;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::scalar(s / S::from_f64(n as f64)),
            rg,
            Op::Mse(a, b),
        ))
    }

    /// Mean cross-entropy of integer labels under softmax(logits); log-sum-exp
    /// stabilized. Gradient is (softmax - onehot) / n.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 {
            return Err(Error::shape("cross_entropy", &ls, &[0, 0]));
        }
        let (n, m) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(Error::contract(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), n),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::contract(
                "cross_entropy",
                format!("label {bad} out of range for {m} classes"),
            ));
        }
        let xd = self.data(logits);
        let mut acc = S::zero();
        for (i, &lab) in labels.iter().enumerate() {
            let row = &xd[i * m..(i + 1) * m];
            let mut mx = row[0];
            for &v in &row[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = S::zero();
            for &v in row {
                denom += (v - mx).exp();
            }
            acc += mx + denom.ln() - row[lab];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(acc / S::from_f64(n as f64)),
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// sum_ij plan[i,j] * ||y_i - yp_j||^2 with the plan detached. This is the
    /// transport objective at a converged plan; its gradient in y and yp is
    /// the envelope gradient of the entropic Wasserstein loss.
    pub fn weighted_sqdist(&mut self, y: Var, yp: Var, plan: &[S]) -> Result<Var> {
        let (sy, sp) = (self.shape(y).to_vec(), self.shape(yp).to_vec());
        if sy.len() != 2 || sp.len() != 2 || sy[1] != sp[1] {
            return Err(Error::shape("weighted_sqdist", &sy, &sp));
        }
        let (n, d, n2) = (sy[0], sy[1], sp[0]);
        if plan.len() != n * n2 {
            return Err(Error::contract(
                "weighted_sqdist",
                format!("plan has {} entries, want {}", plan.len(), n * n2),
            ));
        }
        let (yd, pd) = (self.data(y), self.data(yp));
        let mut obj = S::zero();
        for i in 0..n {
            let yi = &yd[i * d..(i + 1) * d];
            for j in 0..n2 {
                let pj = &pd[j * d..(j + 1) * d];
                let mut s = S::zero();
                for t in 0..d {
                    let df = yi[t] - pj[t];
                    s += df * df;
                }
                obj += plan[i * n2 + j] * s;
            }
        }
        let rg = self.rg(y) || self.rg(yp);
        Ok(self.push(
            Tensor::scalar(obj),
            rg,
            Op::WeightedSqdist {
                y,
                yp,
                plan: plan.to_vec(),
            },
        ))
    }

    /// ||Cov(yp) - I||_F^2 with Cov = Z^T Z / n over mean-centered rows Z.
    /// Requires at least two rows; callers wanting the "skipped" degenerate
    /// case handle n < 2 before building the node.
    pub fn cov_loss(&mut self, yp: Var) -> Result<Var> {
        let sp = self.shape(yp).to_vec();
        if sp.len() != 2 {
            return Err(Error::shape("cov_loss", &sp, &[0, 0]));
        }
        let (n2, d) = (sp[0], sp[1]);
        if n2 < 2 {
            return Err(Error::contract(
                "cov_loss",
                format!("needs >= 2 rows, got {n2}"),
            ));
        }
        let g = cov_gap(self.data(yp), n2, d);
        let mut loss = S::zero();
        for &v in &g {
            loss += v * v;
        }
        let rg = self.rg(yp);
        Ok(self.push(Tensor::scalar(loss), rg, Op::CovLoss(yp)))
    }

    // ---- backward ----

    /// Accumulate d(root)/d(node) into the grad of every reachable
    /// requires_grad node. Root must be a single-element tensor.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!(
                    "root must be scalar, got shape {:?}",
                    self.nodes[root.0].value.shape()
                ),
            ));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::contract(
                "backward",
                "root does not depend on any requires_grad tensor",
            ));
        }
        match &mut self.nodes[root.0].grad {
            Some(g) => g[0] += S::one(),
            g @ None => *g = Some(vec![S::one()]),
        }
        // Creation order is a topological order, so a reverse index sweep
        // visits every consumer before its producers.
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.backprop_node(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, contrib: &[S]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (gd, &c) in g.iter_mut().zip(contrib) {
                    *gd += c;
                }
            }
            slot @ None => *slot = Some(contrib.to_vec()),
        }
    }

    fn backprop_node(&mut self, idx: usize, g: &[S]) {
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, g);
                if self.rg(*b) {
                    let neg: Vec<S> = g.iter().map(|&v| -v).collect();
                    self.add_grad(*b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let da = zip_map(g, self.data(*b), |gv, bv| gv * bv);
                    self.add_grad(*a, &da);
                }
                if self.rg(*b) {
                    let db = zip_map(g, self.data(*a), |gv, av| gv * av);
                    self.add_grad(*b, &db);
                }
            }
            Op::Scale(x, s) => {
                if self.rg(*x) {
                    let dx: Vec<S> = g.iter().map(|&v| v * *s).collect();
                    self.add_grad(*x, &dx);
                }
            }
            Op::AddRowBias(x, b) => {
                self.add_grad(*x, g);
                if self.rg(*b) {
                    let p = self.shape(*b)[0];
                    let mut db = vec![S::zero(); p];
                    for row in g.chunks_exact(p) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.add_grad(*b, &db);
                }
            }
            Op::AddChanBias(x, b) => {
                self.add_grad(*x, g);
                if self.rg(*b) {
                    let xs = self.shape(*x);
                    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut db = vec![S::zero(); c];
                    for s in 0..n {
                        for (ci, d) in db.iter_mut().enumerate() {
                            let base = (s * c + ci) * hw;
                            for t in 0..hw {
                                *d += g[base + t];
                            }
                        }
                    }
                    self.add_grad(*b, &db);
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut da = vec![S::zero(); m * k];
                    kernels::mm_nt(g, self.data(*b), m, p, k, &mut da);
                    self.add_grad(*a, &da);
                }
                if self.rg(*b) {
                    let mut db = vec![S::zero(); k * p];
                    kernels::mm_tn(self.data(*a), g, k, m, p, &mut db);
                    self.add_grad(*b, &db);
                }
            }
            Op::MatmulNT(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.shape(*b)[0];
                if self.rg(*a) {
                    let mut da = vec![S::zero(); m * k];
                    kernels::mm_nn(g, self.data(*b), m, p, k, &mut da);
                    self.add_grad(*a, &da);
                }
                if self.rg(*b) {
                    let mut db = vec![S::zero(); p * k];
                    kernels::mm_tn(g, self.data(*a), p, m, k, &mut db);
                    self.add_grad(*b, &db);
                }
            }
            Op::Conv2d { x, k, stride, pad } => {
                let xs = self.shape(*x).to_vec();
                let ks = self.shape(*k).to_vec();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (f, kh, kw) = (ks[0], ks[2], ks[3]);
                let ho = kernels::conv_out_dim(h, kh, *stride, *pad).expect("conv2d bwd");
                let wo = kernels::conv_out_dim(w, kw, *stride, *pad).expect("conv2d bwd");
                let (ckk, l) = (c * kh * kw, ho * wo);
                let mut cols = vec![S::zero(); ckk * l];
                let need_dk = self.rg(*k);
                let need_dx = self.rg(*x);
                let mut dk = if need_dk {
                    vec![S::zero(); f * ckk]
                } else {
                    Vec::new()
                };
                let mut dx = if need_dx {
                    vec![S::zero(); n * c * h * w]
                } else {
                    Vec::new()
                };
                let mut dcols = if need_dx {
                    vec![S::zero(); ckk * l]
                } else {
                    Vec::new()
                };
                for s in 0..n {
                    let gs = &g[s * f * l..(s + 1) * f * l];
                    if need_dk {
                        // The forward columns are recomputed rather than
                        // cached: backward trades FLOPs for tape memory.
                        kernels::im2col(
                            &self.data(*x)[s * c * h * w..(s + 1) * c * h * w],
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            *stride,
                            *pad,
                            &mut cols,
                        );
                        kernels::mm_nt(gs, &cols, f, l, ckk, &mut dk);
                    }
                    if need_dx {
                        dcols.fill(S::zero());
                        kernels::mm_tn(self.data(*k), gs, ckk, f, l, &mut dcols);
                        kernels::col2im(
                            &dcols,
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            *stride,
                            *pad,
                            &mut dx[s * c * h * w..(s + 1) * c * h * w],
                        );
                    }
                }
                if need_dk {
                    self.add_grad(*k, &dk);
                }
                if need_dx {
                    self.add_grad(*x, &dx);
                }
            }
            Op::ConvT2d { x, k, stride, pad } => {
                let xs = self.shape(*x).to_vec();
                let ks = self.shape(*k).to_vec();
                let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, kh, kw) = (ks[1], ks[2], ks[3]);
                let ho = (h - 1) * stride + kh - 2 * pad;
                let wo = (w - 1) * stride + kw - 2 * pad;
                let (ckk, hw) = (cout * kh * kw, h * w);
                let mut gcols = vec![S::zero(); ckk * hw];
                let need_dk = self.rg(*k);
                let need_dx = self.rg(*x);
                let mut dk = if need_dk {
                    vec![S::zero(); cin * ckk]
                } else {
                    Vec::new()
                };
                let mut dx = if need_dx {
                    vec![S::zero(); n * cin * hw]
                } else {
                    Vec::new()
                };
                for s in 0..n {
                    kernels::im2col(
                        &g[s * cout * ho * wo..(s + 1) * cout * ho * wo],
                        cout,
                        ho,
                        wo,
                        kh,
                        kw,
                        *stride,
                        *pad,
                        &mut gcols,
                    );
                    if need_dx {
                        kernels::mm_nn(
                            self.data(*k),
                            &gcols,
                            cin,
                            ckk,
                            hw,
                            &mut dx[s * cin * hw..(s + 1) * cin * hw],
                        );
                    }
                    if need_dk {
                        kernels::mm_nt(
                            &self.data(*x)[s * cin * hw..(s + 1) * cin * hw],
                            &gcols,
                            cin,
                            hw,
                            ckk,
                            &mut dk,
                        );
                    }
                }
                if need_dk {
                    self.add_grad(*k, &dk);
                }
                if need_dx {
                    self.add_grad(*x, &dx);
                }
            }
            Op::AvgPool2(x) => {
                if self.rg(*x) {
                    let xs = self.shape(*x);
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let mut dx = vec![S::zero(); n * c * h * w];
                    kernels::avgpool2_backward(g, n * c, h, w, &mut dx);
                    self.add_grad(*x, &dx);
                }
            }
            Op::Relu(x) => {
                if self.rg(*x) {
                    let dx = zip_map(g, self.data(*x), |gv, xv| {
                        if xv > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    });
                    self.add_grad(*x, &dx);
                }
            }
            Op::Sigmoid(x) => {
                if self.rg(*x) {
                    let y = self.nodes[idx].value.data();
                    let dx = zip_map(g, y, |gv, yv| gv * yv * (S::one() - yv));
                    self.add_grad(*x, &dx);
                }
            }
            Op::Softmax { x, axis } => {
                if self.rg(*x) {
                    let shape = self.nodes[idx].value.shape().to_vec();
                    let (outer, m, inner) = lane_dims(&shape, *axis);
                    let y = self.nodes[idx].value.data();
                    let mut dx = vec![S::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * m * inner + j * inner + i;
                            let mut dot = S::zero();
                            for j in 0..m {
                                dot += g[at(j)] * y[at(j)];
                            }
                            for j in 0..m {
                                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    self.add_grad(*x, &dx);
                }
            }
            Op::Reshape(x) => self.add_grad(*x, g),
            Op::Sum(x) => {
                if self.rg(*x) {
                    let dx = vec![g[0]; self.nodes[x.0].value.numel()];
                    self.add_grad(*x, &dx);
                }
            }
            Op::Mean(x) => {
                if self.rg(*x) {
                    let n = self.nodes[x.0].value.numel();
                    let dx = vec![g[0] / S::from_f64(n as f64); n];
                    self.add_grad(*x, &dx);
                }
            }
            Op::Concat0(a, b) => {
                let na = self.nodes[a.0].value.numel();
                self.add_grad(*a, &g[..na]);
                self.add_grad(*b, &g[na..]);
            }
            Op::Mse(a, b) => {
                let n = self.nodes[a.0].value.numel();
                let scale = S::from_f64(2.0 / n as f64) * g[0];
                if self.rg(*a) {
                    let da = zip_map(self.data(*a), self.data(*b), |x, y| scale * (x - y));
                    self.add_grad(*a, &da);
                }
                if self.rg(*b) {
                    let db = zip_map(self.data(*a), self.data(*b), |x, y| scale * (y - x));
                    self.add_grad(*b, &db);
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if self.rg(*logits) {
                    let ls = self.shape(*logits);
                    let (n, m) = (ls[0], ls[1]);
                    let xd = self.data(*logits);
                    let gn = g[0] / S::from_f64(n as f64);
                    let mut dl = vec![S::zero(); n * m];
                    for (i, &lab) in labels.iter().enumerate() {
                        let row = &xd[i * m..(i + 1) * m];
                        let mut mx = row[0];
                        for &v in &row[1..] {
                            if v > mx {
                                mx = v;
                            }
                        }
                        let mut denom = S::zero();
                        for &v in row {
                            denom += (v - mx).exp();
                        }
                        let drow = &mut dl[i * m..(i + 1) * m];
                        for (j, &v) in row.iter().enumerate() {
                            drow[j] = gn * ((v - mx).exp() / denom);
                        }
                        drow[lab] -= gn;
                    }
                    self.add_grad(*logits, &dl);
                }
            }
            Op::WeightedSqdist { y, yp, plan } => {
                let (n, d) = (self.shape(*y)[0], self.shape(*y)[1]);
                let n2 = self.shape(*yp)[0];
                let two_g = S::from_f64(2.0) * g[0];
                if self.rg(*y) {
                    // dy_i = 2 g [ (sum_j pi_ij) y_i - sum_j pi_ij yp_j ]
                    let mut mix = vec![S::zero(); n * d];
                    kernels::mm_nn(plan, self.data(*yp), n, n2, d, &mut mix);
                    let yd = self.data(*y);
                    let mut dy = vec![S::zero(); n * d];
                    for i in 0..n {
                        let mut rs = S::zero();
                        for j in 0..n2 {
                            rs += plan[i * n2 + j];
                        }
                        for t in 0..d {
                            dy[i * d + t] = two_g * (rs * yd[i * d + t] - mix[i * d + t]);
                        }
                    }
                    self.add_grad(*y, &dy);
                }
                if self.rg(*yp) {
                    let mut mix = vec![S::zero(); n2 * d];
                    kernels::mm_tn(plan, self.data(*y), n2, n, d, &mut mix);
                    let pd = self.data(*yp);
                    let mut dyp = vec![S::zero(); n2 * d];
                    for j in 0..n2 {
                        let mut cs = S::zero();
                        for i in 0..n {
                            cs += plan[i * n2 + j];
                        }
                        for t in 0..d {
                            dyp[j * d + t] = two_g * (cs * pd[j * d + t] - mix[j * d + t]);
                        }
                    }
                    self.add_grad(*yp, &dyp);
                }
            }
            Op::CovLoss(yp) => {
                if self.rg(*yp) {
                    let (n2, d) = (self.shape(*yp)[0], self.shape(*yp)[1]);
                    let pd = self.data(*yp);
                    let gap = cov_gap(pd, n2, d);
                    // dL/dZ = (4/n) Z (Cov - I); column sums of Z vanish, so
                    // the mean-centering projection is a no-op.
                    let mut mu = vec![S::zero(); d];
                    for row in pd.chunks_exact(d) {
                        for (m, &v) in mu.iter_mut().zip(row) {
                            *m += v;
                        }
                    }
                    let inv_n = S::from_f64(1.0 / n2 as f64);
                    for m in &mut mu {
                        *m = *m * inv_n;
                    }
                    let mut z = vec![S::zero(); n2 * d];
                    for i in 0..n2 {
                        for t in 0..d {
                            z[i * d + t] = pd[i * d + t] - mu[t];
                        }
                    }
                    let mut zg = vec![S::zero(); n2 * d];
                    kernels::mm_nn(&z, &gap, n2, d, d, &mut zg);
                    let scale = S::from_f64(4.0 / n2 as f64) * g[0];
                    for v in &mut zg {
                        *v = *v * scale;
                    }
                    self.add_grad(*yp, &zg);
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

/// (outer, axis extent, inner) strides for lane iteration along `axis`.
fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let m = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, m, inner)
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn stable_sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Cov(rows) - I as a flat d x d matrix.
fn cov_gap<S: Scalar>(rows: &[S], n: usize, d: usize) -> Vec<S> {
    let mut mu = vec![S::zero(); d];
    for row in rows.chunks_exact(d) {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv_n = S::from_f64(1.0 / n as f64);
    for m in &mut mu {
        *m = *m * inv_n;
    }
    let mut z = vec![S::zero(); n * d];
    for i in 0..n {
        for t in 0..d {
            z[i * d + t] = rows[i * d + t] - mu[t];
        }
    }
    let mut cov = vec![S::zero(); d * d];
    kernels::mm_tn(&z, &z, d, n, d, &mut cov);
    for v in &mut cov {
        *v = *v * inv_n;
    }
    for t in 0..d {
        cov[t * d + t] -= S::one();
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).expect("test tensor")
    }

    #[test]
    fn identity_matmul_passes_through() {
        let mut g = Graph::<f64>::new();
        let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.matmul(i2, a).expect("matmul");
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_value() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let y = g.matmul(a, b).expect("matmul");
        assert_eq!(g.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn square_rule_grad() {
        // root = x * x at x = 3 -> droot/dx = 6
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).expect("mul");
        g.backward(y).expect("backward");
        assert_eq!(g.grad(x).expect("grad"), &[6.0]);
    }

    #[test]
    fn reuse_accumulates_grads() {
        // root = x + x at x = 1 -> grad 2
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(1.0), true);
        let y = g.add(x, x).expect("add");
        g.backward(y).expect("backward");
        assert_eq!(g.grad(x).expect("grad"), &[2.0]);
    }

    #[test]
    fn fanout_grad_is_the_sum_of_path_grads() {
        // y = sum(2x) + sum(3x): dy/dx = 5 everywhere.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
        let a = g.scale(x, 2.0);
        let b = g.scale(x, 3.0);
        let sa = g.sum(a);
        let sb = g.sum(b);
        let y = g.add(sa, sb).expect("add");
        g.backward(y).expect("backward");
        assert_eq!(g.grad(x).expect("grad"), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = g.scale(x, 2.0);
        let err = g.backward(y).unwrap_err();
        assert!(err.to_string().contains("scalar"), "{err}");
    }

    #[test]
    fn constant_subgraphs_get_no_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = g.constant(t(&[2], &[5.0, 5.0]));
        let y = g.mul(x, c).expect("mul");
        let s = g.sum(y);
        g.backward(s).expect("backward");
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).expect("grad"), &[5.0, 5.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]));
        let y = g.softmax(x, 1).expect("softmax");
        for row in g.value(y).data().chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let y = g.softmax(x, 1).expect("softmax");
        let denom: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, &v) in g.value(y).data().iter().enumerate() {
            let direct = ((j + 1) as f64).exp() / denom;
            assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
        }
    }

    #[test]
    fn softmax_uniform_and_dominant_cases() {
        let mut g = Graph::<f64>::new();
        let u = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax(u, 0).expect("softmax");
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let dom = g.constant(t(&[3], &[1000.0, 0.0, 0.0]));
        let z = g.softmax(dom, 0).expect("softmax");
        let zd = g.value(z).data();
        assert!(zd.iter().all(|v| v.is_finite()));
        assert!((zd[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv2d_identity_kernel_passes_input_through() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = g.conv2d(x, k, 1, 0).expect("conv2d");
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv2d_averages_constant_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 1, 5, 5], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0));
        let y = g.conv2d(x, k, 1, 0).expect("conv2d");
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
        for &v in g.value(y).data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let k = g.constant(Tensor::zeros(&[1, 1, 7, 7]));
        assert!(g.conv2d(x, k, 1, 0).is_err());
    }

    #[test]
    fn conv_t2d_is_adjoint_of_conv2d() {
        // <conv(x), u> == <x, convT(u)> with the same kernel/stride/pad.
        // Geometry must divide exactly ((h + 2p - kh) % stride == 0), else
        // the conv drops trailing rows and the round-trip shape shrinks.
        let mut rng = crate::rng::Rng::new(42);
        let mut g = Graph::<f64>::new();
        let (c, f, h, w, stride, pad) = (2, 3, 7, 9, 2, 1);
        let xv: Vec<f64> = (0..c * h * w).map(|_| rng.range(-1.0, 1.0)).collect();
        let kv: Vec<f64> = (0..f * c * 9).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = g.constant(t(&[1, c, h, w], &xv));
        let k = g.constant(t(&[f, c, 3, 3], &kv));
        let y = g.conv2d(x, k, stride, pad).expect("conv2d");
        let ys = g.value(y).shape().to_vec();
        let uv: Vec<f64> = (0..ys.iter().product::<usize>())
            .map(|_| rng.range(-1.0, 1.0))
            .collect();
        let u = g.constant(t(&ys, &uv));
        // kernel for convT has layout [cin x cout x kh x kw] = same memory as
        // the forward kernel read as [f x c x kh x kw] with cin = f.
        let kt = g.constant(t(&[f, c, 3, 3], &kv));
        let back = g.conv_t2d(u, kt, stride, pad).expect("conv_t2d");
        assert_eq!(g.value(back).shape(), &[1, c, h, w]);
        let lhs: f64 = g
            .value(y)
            .data()
            .iter()
            .zip(&uv)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = g
            .value(back)
            .data()
            .iter()
            .zip(&xv)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn cross_entropy_uniform_logits_equals_ln_m() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[4, 10]));
        let l = g.cross_entropy(logits, &[0, 3, 7, 9]).expect("ce");
        assert!((g.scalar_value(l) - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut g = Graph::<f64>::new();
        let mut row = vec![0.0; 10];
        row[4] = 1000.0;
        let logits = g.constant(t(&[1, 10], &row));
        let l = g.cross_entropy(logits, &[4]).expect("ce");
        assert!(g.scalar_value(l).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[1, 3]));
        assert!(g.cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let mut g = Graph::<f64>::new();
        let vals = [0.3, -1.2, 0.8, 0.1, 2.0, -0.5];
        let logits = g.leaf(t(&[2, 3], &vals), true);
        let l = g.cross_entropy(logits, &[2, 0]).expect("ce");
        g.backward(l).expect("backward");
        let grad = g.grad(logits).expect("grad");
        for i in 0..2 {
            let row = &vals[i * 3..(i + 1) * 3];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let mut expect = row[j].exp() / denom;
                if (i == 0 && j == 2) || (i == 1 && j == 0) {
                    expect -= 1.0;
                }
                expect /= 2.0; // mean over 2 samples
                assert!(
                    (grad[i * 3 + j] - expect).abs() < 1e-12,
                    "({i},{j}): {} vs {expect}",
                    grad[i * 3 + j]
                );
            }
        }
    }

    #[test]
    fn mse_basics() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let same = g.mse(a, a).expect("mse");
        assert_eq!(g.scalar_value(same), 0.0);
        let b = g.constant(t(&[2, 2], &[2.0, 3.0, 4.0, 5.0]));
        let off = g.mse(a, b).expect("mse");
        assert!((g.scalar_value(off) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cov_loss_hand_value() {
        // Rows (1,0),(-1,0),(0,1),(0,-1): Cov = diag(1/2,1/2), loss = 0.5.
        let mut g = Graph::<f64>::new();
        let yp = g.constant(t(&[4, 2], &[1., 0., -1., 0., 0., 1., 0., -1.]));
        let l = g.cov_loss(yp).expect("cov");
        assert!((g.scalar_value(l) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_sqdist_singleton() {
        let mut g = Graph::<f64>::new();
        let y = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let yp = g.constant(t(&[1, 2], &[3.0, 4.0]));
        let l = g.weighted_sqdist(y, yp, &[1.0]).expect("wsd");
        assert!((g.scalar_value(l) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn truncate_keeps_leading_leaves_usable() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let base = g.len();
        let y = g.scale(p, 3.0);
        let s = g.sum(y);
        g.backward(s).expect("backward");
        assert_eq!(g.grad(p).expect("grad"), &[3.0, 3.0]);
        g.truncate(base);
        g.zero_grads();
        assert!(g.grad(p).is_none());
        // Second step over a fresh tape sees the same leaf.
        let y2 = g.scale(p, 4.0);
        let s2 = g.sum(y2);
        g.backward(s2).expect("backward");
        assert_eq!(g.grad(p).expect("grad"), &[4.0, 4.0]);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let run = || {
            let mut rng = crate::rng::Rng::new(77);
            let mut g = Graph::<f64>::new();
            let xv: Vec<f64> = (0..24).map(|_| rng.range(-2.0, 2.0)).collect();
            let kv: Vec<f64> = (0..18).map(|_| rng.range(-2.0, 2.0)).collect();
            let x = g.constant(t(&[1, 2, 4, 3], &xv));
            let k = g.constant(t(&[1, 2, 3, 3], &kv));
            let y = g.conv2d(x, k, 1, 1).expect("conv");
            let s = g.sigmoid(y);
            let m = g.mean(s);
            g.scalar_value(m).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn concat0_stacks_and_splits_grads() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[1, 2], &[1.0, 2.0]), true);
        let b = g.leaf(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]), true);
        let y = g.concat0(a, b).expect("concat");
        assert_eq!(g.value(y).shape(), &[3, 2]);
        let w = g.constant(t(&[3, 2], &[1.0, 10.0, 100.0, 1000.0, 2.0, 20.0]));
        let prod = g.mul(y, w).expect("mul");
        let s = g.sum(prod);
        g.backward(s).expect("backward");
        assert_eq!(g.grad(a).expect("grad a"), &[1.0, 10.0]);
        assert_eq!(g.grad(b).expect("grad b"), &[100.0, 1000.0, 2.0, 20.0]);
    }

    #[test]
    fn avg_pool_shape_and_value() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(
            &[1, 1, 2, 4],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        ));
        let y = g.avg_pool2(x).expect("pool");
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 2]);
        assert_eq!(g.value(y).data(), &[3.5, 5.5]);
    }
}
