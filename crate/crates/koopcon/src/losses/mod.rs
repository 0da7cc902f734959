//! The four condensation loss terms and their weighted combination.
//!
//! Everything here builds on graph ops so gradients flow end to end; the
//! entropic transport term is the one exception, where the coupling is
//! solved outside the tape and then held constant (envelope gradient).

pub mod exact;
pub mod sinkhorn;

pub use exact::exact_ot_oracle;
pub use sinkhorn::{sinkhorn_plan, squared_dist_matrix, TransportPlan};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Mixing weights and transport-solver knobs for the total objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Reconstruction (autoencoder fidelity).
    pub alpha0: f64,
    /// Cross-entropy on real and condensed logits.
    pub alpha1: f64,
    /// Entropic Wasserstein distribution match.
    pub alpha2: f64,
    /// Covariance spread regularizer.
    pub alpha3: f64,
    /// Entropic regularization as a multiple of the mean pairwise cost.
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tolerance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha0: 1.0,
            alpha1: 0.1,
            alpha2: 1.0,
            alpha3: 0.01,
            sinkhorn_epsilon: 0.05,
            sinkhorn_max_iters: 200,
            sinkhorn_tolerance: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !self.sinkhorn_epsilon.is_finite() || self.sinkhorn_epsilon <= 0.0 {
            return Err(Error::config(
                "sinkhorn_epsilon",
                format!("must be > 0, got {}", self.sinkhorn_epsilon),
            ));
        }
        if self.sinkhorn_max_iters == 0 {
            return Err(Error::config("sinkhorn_max_iters", "must be >= 1"));
        }
        if !self.sinkhorn_tolerance.is_finite() || self.sinkhorn_tolerance <= 0.0 {
            return Err(Error::config(
                "sinkhorn_tolerance",
                format!("must be > 0, got {}", self.sinkhorn_tolerance),
            ));
        }
        Ok(())
    }
}

/// Scalar values of each term plus the combined objective, recorded per step.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub cross_entropy: f64,
    pub wasserstein: f64,
    pub covariance: f64,
    pub total: f64,
}

/// Mean squared error between the input batch and its reconstruction.
pub fn reconstruction_loss<S: Scalar>(g: &mut Graph<S>, x: Var, x_hat: Var) -> Result<Var> {
    g.mse(x_hat, x)
}

/// Mean softmax cross-entropy of integer labels under `logits` [n x classes].
pub fn cross_entropy_loss<S: Scalar>(
    g: &mut Graph<S>,
    logits: Var,
    labels: &[usize],
) -> Result<Var> {
    g.cross_entropy(logits, labels)
}

/// Entropic Wasserstein term between latent batches `y` [n x d] and `yp`
/// [n' x d].
///
/// The coupling is solved to tolerance outside the tape, then frozen into a
/// weighted squared-distance node: by the envelope theorem the gradient of
/// the regularized objective with respect to the points is exactly the
/// gradient at the fixed optimal plan.
pub fn sinkhorn_wasserstein<S: Scalar>(
    g: &mut Graph<S>,
    y: Var,
    yp: Var,
    w: &LossWeights,
) -> Result<(Var, TransportPlan<S>)> {
    let cost = squared_dist_matrix(g.value(y), g.value(yp))?;
    let plan = sinkhorn_plan(
        &cost,
        w.sinkhorn_epsilon,
        w.sinkhorn_max_iters,
        w.sinkhorn_tolerance,
    )?;
    let var = g.weighted_sqdist(y, yp, plan.plan.data())?;
    Ok((var, plan))
}

/// Covariance spread term; `skipped` marks the degenerate single-row batch
/// where a sample covariance does not exist and the term contributes zero.
#[derive(Clone, Copy, Debug)]
pub struct CovTerm {
    pub var: Var,
    pub skipped: bool,
}

/// `||Cov(yp) - I||_F^2` over rows of `yp` [n' x d].
pub fn covariance_loss<S: Scalar>(g: &mut Graph<S>, yp: Var) -> Result<CovTerm> {
    let shape = g.value(yp).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("covariance_loss", &shape, &[0, 0]));
    }
    if shape[0] < 2 {
        return Ok(CovTerm {
            var: g.constant(Tensor::scalar(S::zero())),
            skipped: true,
        });
    }
    Ok(CovTerm {
        var: g.cov_loss(yp)?,
        skipped: false,
    })
}

/// Weighted sum `a0 L_re + a1 L_ce + a2 L_w + a3 L_cov`.
///
/// Every term is checked for finiteness first; a NaN or infinity aborts with
/// a numeric error naming the offending term so divergence is diagnosable.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    l_re: Var,
    l_ce: Var,
    l_w: Var,
    l_cov: Var,
    w: &LossWeights,
) -> Result<Var> {
    for (name, v) in [
        ("reconstruction", l_re),
        ("cross_entropy", l_ce),
        ("wasserstein", l_w),
        ("covariance", l_cov),
    ] {
        let val = g.scalar_value(v).as_f64();
        if !val.is_finite() {
            return Err(Error::numeric(name, format!("loss term is {val}")));
        }
    }
    let a = g.scale(l_re, S::from_f64(w.alpha0));
    let b = g.scale(l_ce, S::from_f64(w.alpha1));
    let c = g.scale(l_w, S::from_f64(w.alpha2));
    let d = g.scale(l_cov, S::from_f64(w.alpha3));
    let ab = g.add(a, b)?;
    let abc = g.add(ab, c)?;
    g.add(abc, d)
}
