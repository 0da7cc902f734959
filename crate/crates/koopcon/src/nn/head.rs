//! The condenser head: single-head self-attention over a latent batch
//! followed by the linear condensation map T.
//!
//! One head is shared across all classes; the class loop feeds it one
//! class batch at a time and labels come from the loop, not the head.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// SA parameters (W_Q, W_K, W_V, each d x d) plus the mixing matrix
/// M (n' x n_b) realizing T.
#[derive(Clone, Copy, Debug)]
pub struct CondenserHead {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub m: Var,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub condensed_size: usize,
}

impl CondenserHead {
    /// `W_Q`, `W_K`, `W_V` start near the identity and `M` near a
    /// row-selection matrix, so the initial condensed latents are a lightly
    /// mixed subset of the batch rather than an arbitrary projection.
    /// Scaled near-identity queries/keys matter: with random dense W_Q, W_K
    /// the attention logits start near zero, the softmax is uniform, and
    /// every attended row equals the batch mean -- a collapsed start that
    /// the covariance term then has to fight. With Q = K = c y the logits
    /// are c^2 y y^T / sqrt(d), which favours self-attention, and c is
    /// chosen so that unit-norm latents produce logit gaps of order
    /// ln(batch) rather than order 1/sqrt(d). All four matrices get small
    /// uniform noise: exactly symmetric rows would receive exactly
    /// symmetric gradients and could never differentiate.
    pub fn init<S: Scalar>(
        g: &mut Graph<S>,
        rng: &mut Rng,
        latent_dim: usize,
        batch_size: usize,
        condensed_size: usize,
    ) -> Result<CondenserHead> {
        if latent_dim == 0 || batch_size == 0 || condensed_size == 0 {
            return Err(Error::contract(
                "condenser_head",
                "latent_dim, batch_size and condensed_size must all be >= 1",
            ));
        }
        let d = latent_dim;
        let mut uniform = |shape: &[usize], l: f64| -> Tensor<S> {
            let data = (0..shape.iter().product())
                .map(|_| S::from_f64(rng.range(-l, l)))
                .collect();
            Tensor::from_vec(shape, data).expect("init shape")
        };
        // c^2 / sqrt(d) ~ ln(n_b) for unit-norm latents.
        let qk_scale = ((batch_size.max(2) as f64).ln() * (d as f64).sqrt()).sqrt();
        let mut near_identity = |scale: f64| {
            let mut w = uniform(&[d, d], 0.01);
            for i in 0..d {
                let v = w.data()[i * d + i] + S::from_f64(scale);
                w.data_mut()[i * d + i] = v;
            }
            w
        };
        let w_q = near_identity(qk_scale);
        let w_k = near_identity(qk_scale);
        let w_v = near_identity(1.0);
        let mut m = uniform(&[condensed_size, batch_size], 0.01);
        for row in 0..condensed_size {
            let col = row % batch_size;
            let v = m.data()[row * batch_size + col] + S::one();
            m.data_mut()[row * batch_size + col] = v;
        }
        Ok(CondenserHead {
            w_q: g.leaf(w_q, true),
            w_k: g.leaf(w_k, true),
            w_v: g.leaf(w_v, true),
            m: g.leaf(m, true),
            latent_dim,
            batch_size,
            condensed_size,
        })
    }

    /// Scaled dot-product attention over the rows of `y` [n x d]:
    /// `softmax(Q K^T / sqrt(d)) V`.
    pub fn self_attention<S: Scalar>(&self, g: &mut Graph<S>, y: Var) -> Result<Var> {
        let ys = g.value(y).shape().to_vec();
        if ys.len() != 2 || ys[1] != self.latent_dim {
            return Err(Error::shape("self_attention", &ys, &[0, self.latent_dim]));
        }
        let q = g.matmul(y, self.w_q)?;
        let k = g.matmul(y, self.w_k)?;
        let v = g.matmul(y, self.w_v)?;
        let logits = g.matmul_nt(q, k)?;
        let scaled = g.scale(logits, S::from_f64(1.0 / (self.latent_dim as f64).sqrt()));
        let weights = g.softmax(scaled, 1)?;
        g.matmul(weights, v)
    }

    /// T: mix exactly `batch_size` attended rows into `condensed_size` rows.
    pub fn condense_map<S: Scalar>(&self, g: &mut Graph<S>, y_att: Var) -> Result<Var> {
        let ys = g.value(y_att).shape().to_vec();
        if ys.len() != 2 || ys[1] != self.latent_dim {
            return Err(Error::shape("condense_map", &ys, &[0, self.latent_dim]));
        }
        if ys[0] != self.batch_size {
            return Err(Error::contract(
                "condense_map",
                format!(
                    "T is {} x {} and needs exactly {} rows, got {}",
                    self.condensed_size, self.batch_size, self.batch_size, ys[0]
                ),
            ));
        }
        g.matmul(self.m, y_att)
    }

    /// The full head: `Y' = T(SA(Y))`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, y: Var) -> Result<Var> {
        let att = self.self_attention(g, y)?;
        self.condense_map(g, att)
    }

    pub fn params(&self) -> [Var; 4] {
        [self.w_q, self.w_k, self.w_v, self.m]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn head(g: &mut Graph<f64>, d: usize, n_b: usize, np: usize) -> CondenserHead {
        let mut rng = Rng::new(55);
        CondenserHead::init(g, &mut rng, d, n_b, np).expect("head")
    }

    fn rows(g: &mut Graph<f64>, n: usize, d: usize, seed: u64) -> Var {
        let mut rng = Rng::new(seed);
        let data = (0..n * d).map(|_| rng.range(-1.0, 1.0)).collect();
        g.leaf(Tensor::from_vec(&[n, d], data).expect("rows"), true)
    }

    #[test]
    fn zero_logits_average_the_value_rows() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 3, 4, 2);
        g.set_value(h.w_q, Tensor::zeros(&[3, 3])).expect("wq");
        g.set_value(h.w_k, Tensor::zeros(&[3, 3])).expect("wk");
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        g.set_value(h.w_v, eye).expect("wv");
        let y = rows(&mut g, 4, 3, 1);
        let out = h.self_attention(&mut g, y).expect("attention");
        let yd = g.value(y).data().to_vec();
        let od = g.value(out).data();
        for t in 0..3 {
            let mean = (0..4).map(|i| yd[i * 3 + t]).sum::<f64>() / 4.0;
            for i in 0..4 {
                assert!((od[i * 3 + t] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_batch_returns_its_value_projection() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 3, 1, 1);
        let y = rows(&mut g, 1, 3, 2);
        let out = h.self_attention(&mut g, y).expect("attention");
        let v = g.matmul(y, h.w_v).expect("reference projection");
        let (a, b) = (g.value(out).data(), g.value(v).data());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_a_direct_reference_evaluation() {
        let mut g = Graph::<f64>::new();
        let (n, d) = (3, 4);
        let h = head(&mut g, d, n, 2);
        let y = rows(&mut g, n, d, 3);
        let out = h.self_attention(&mut g, y).expect("attention");

        // Independent dense-math evaluation of softmax(QK^T/sqrt(d)) V.
        let mm = |a: &[f64], b: &[f64], m: usize, k: usize, p: usize| {
            let mut o = vec![0.0; m * p];
            for i in 0..m {
                for j in 0..p {
                    o[i * p + j] = (0..k).map(|t| a[i * k + t] * b[t * p + j]).sum();
                }
            }
            o
        };
        let yd = g.value(y).data().to_vec();
        let q = mm(&yd, g.value(h.w_q).data(), n, d, d);
        let k = mm(&yd, g.value(h.w_k).data(), n, d, d);
        let v = mm(&yd, g.value(h.w_v).data(), n, d, d);
        let mut want = vec![0.0; n * d];
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for t in 0..d {
                want[i * d + t] = (0..n).map(|j| exps[j] / z * v[j * d + t]).sum();
            }
        }
        for (a, b) in g.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }

        // Same weights, recomputed from the tape values, must lie on the
        // simplex: attention rows are convex combinations.
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut total = 0.0;
            for e in &exps {
                let w = e / z;
                assert!(w >= 0.0);
                total += w;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_mixing_rows_select_input_rows() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 3, 4, 2);
        let mut sel = Tensor::zeros(&[2, 4]);
        sel.data_mut()[0 * 4 + 0] = 1.0; // row 0 <- input 0
        sel.data_mut()[1 * 4 + 2] = 1.0; // row 1 <- input 2
        g.set_value(h.m, sel).expect("m");
        let y = rows(&mut g, 4, 3, 4);
        let out = h.condense_map(&mut g, y).expect("map");
        let (yd, od) = (g.value(y).data(), g.value(out).data());
        assert_eq!(&od[0..3], &yd[0..3]);
        assert_eq!(&od[3..6], &yd[6..9]);
    }

    #[test]
    fn uniform_mixing_rows_average_the_batch() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 2, 4, 2);
        g.set_value(h.m, Tensor::full(&[2, 4], 0.25)).expect("m");
        let y = rows(&mut g, 4, 2, 5);
        let out = h.condense_map(&mut g, y).expect("map");
        let yd = g.value(y).data().to_vec();
        let od = g.value(out).data();
        for t in 0..2 {
            let mean = (0..4).map(|i| yd[i * 2 + t] * 0.25).sum::<f64>();
            assert!((od[t] - mean).abs() < 1e-12);
            assert!((od[2 + t] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn condense_map_is_linear() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 3, 4, 2);
        let y1 = rows(&mut g, 4, 3, 6);
        let y2 = rows(&mut g, 4, 3, 7);
        let (a, b) = (2.0, -0.7);
        let sy1 = g.scale(y1, a);
        let sy2 = g.scale(y2, b);
        let combo = g.add(sy1, sy2).expect("combo");
        let lhs = h.condense_map(&mut g, combo).expect("map combo");
        let m1 = h.condense_map(&mut g, y1).expect("map y1");
        let m2 = h.condense_map(&mut g, y2).expect("map y2");
        let sm1 = g.scale(m1, a);
        let sm2 = g.scale(m2, b);
        let rhs = g.add(sm1, sm2).expect("sum");
        for (x, y) in g.value(lhs).data().iter().zip(g.value(rhs).data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_batch_contract_is_enforced() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 3, 4, 2);
        let y = rows(&mut g, 5, 3, 8);
        let err = h.condense_map(&mut g, y).unwrap_err();
        assert!(err.to_string().contains("exactly 4 rows"), "{err}");
        let narrow = rows(&mut g, 4, 2, 9);
        assert!(h.self_attention(&mut g, narrow).is_err(), "width mismatch");
    }

    #[test]
    fn head_output_shape_and_purity() {
        let mut g = Graph::<f64>::new();
        let h = head(&mut g, 5, 6, 3);
        let y = rows(&mut g, 6, 5, 10);
        let a = h.forward(&mut g, y).expect("forward");
        let b = h.forward(&mut g, y).expect("forward again");
        assert_eq!(g.value(a).shape(), &[3, 5]);
        let (da, db) = (g.value(a).data(), g.value(b).data());
        assert!(da.iter().zip(db).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn mixing_matrix_gradient_matches_finite_differences() {
        let mut probe = Graph::<f64>::new();
        let template = head(&mut probe, 3, 4, 2);
        let m0 = probe.value(template.m).clone();
        let mut rng = Rng::new(11);
        let y0 = Tensor::from_vec(
            &[4, 3],
            (0..12).map(|_| rng.range(-1.0, 1.0)).collect::<Vec<f64>>(),
        )
        .expect("y0");
        let report = gradcheck::check(&[m0, y0], 1e-5, |g, vars| {
            let mut rng = Rng::new(55);
            let mut h = CondenserHead::init(g, &mut rng, 3, 4, 2)?;
            h.m = vars[0]; // differentiate through the declared input instead
            let out = h.forward(g, vars[1])?;
            Ok(g.sum(out))
        })
        .expect("gradcheck");
        assert!(report.passes(1e-5), "{report:?}");
    }
}
